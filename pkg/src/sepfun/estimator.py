"""Seeded, chunked Monte Carlo estimation of orbit separability probabilities.

Work is cut into chunks of ``plan.chunk_size`` spectra.  The random stream of
chunk ``i`` depends only on ``(plan.seed, i)``, and tallies are integers, so a
merged curve is bit-identical whatever the worker count or execution order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import multiprocessing
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special
from scipy.stats import qmc

from .qstate import (
    Ensemble,
    Spectrum,
    ValidationError,
    max_concurrence,
    max_concurrence_batch,
    orbit_points,
    separable_mask,
)

SPECTRAL_LAWS = ("uniform-simplex", "dirichlet-half", "iso-concurrence")
ISO_BASES = ("uniform-simplex", "dirichlet-half")
CURVE_HEADER = ("beta", "c_lo", "c_hi", "n_total", "n_sep", "sigma_hat", "stderr")

# matrices evaluated per numpy batch; bounds peak memory
_BLOCK = 1 << 16


def default_edges(width: float = 0.01) -> tuple[float, ...]:
    """Uniform grid over [0, 1]; 0.5 is always an edge when 0.5/width is integral."""
    n = int(round(1.0 / width))
    if not math.isclose(n * width, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValidationError(f"bin width {width} does not tile [0, 1]")
    return tuple(float(x) for x in np.round(np.linspace(0.0, 1.0, n + 1), 12))


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream for one chunk, a pure function of ``(seed, chunk)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chunk),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SamplingPlan:
    """Everything needed to reproduce a binned estimate.

    ``spectral_law`` is one of :data:`SPECTRAL_LAWS`.  For ``iso-concurrence``
    either ``iso_c`` fixes a single concurrence, or (``iso_c is None``) the
    spectra are stratified round-robin over the bins that lie inside
    ``c_range``, with C uniform inside each bin.  ``iso_base`` names the
    simplex law that iso-concurrence spectra are conditioned from.
    """

    seed: int
    ensemble: Ensemble
    spectral_law: str = "uniform-simplex"
    n_spectra: int = 10_000
    orbits_per_spectrum: int = 1
    bin_edges: tuple[float, ...] = field(default_factory=default_edges)
    chunk_size: int = 4096
    iso_c: float | None = None
    c_range: tuple[float, float] = (0.0, 1.0)
    qmc: bool = False
    iso_base: str = "uniform-simplex"

    def __post_init__(self):
        object.__setattr__(self, "ensemble", Ensemble.parse(self.ensemble))
        object.__setattr__(self, "bin_edges", tuple(float(e) for e in self.bin_edges))
        object.__setattr__(self, "c_range", tuple(float(c) for c in self.c_range))
        if self.spectral_law not in SPECTRAL_LAWS:
            raise ValidationError(f"unknown spectral law {self.spectral_law!r}")
        if self.iso_base not in ISO_BASES:
            raise ValidationError(f"unknown iso-concurrence base law {self.iso_base!r}")
        for name in ("n_spectra", "orbits_per_spectrum", "chunk_size"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        e = np.asarray(self.bin_edges)
        if len(e) < 2 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise ValidationError("bin_edges must increase strictly from 0 to 1")
        if self.iso_c is not None and not 0.0 <= self.iso_c <= 1.0:
            raise ValidationError("iso_c must lie in [0, 1]")
        lo, hi = self.c_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValidationError("c_range must satisfy 0 <= lo < hi <= 1")
        if self.qmc and self.spectral_law == "iso-concurrence":
            raise ValidationError("qmc is only available for simplex laws")
        if self.spectral_law == "iso-concurrence" and self.iso_c is None and not self._strata():
            raise ValidationError("c_range contains no complete bin")

    @property
    def n_chunks(self) -> int:
        return -(-self.n_spectra // self.chunk_size)

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) - 1

    def chunk_bounds(self, i: int) -> tuple[int, int]:
        start = i * self.chunk_size
        return start, min(start + self.chunk_size, self.n_spectra)

    def _strata(self) -> list[int]:
        lo, hi = self.c_range
        e = self.bin_edges
        return [b for b in range(self.n_bins) if e[b] >= lo - 1e-12 and e[b + 1] <= hi + 1e-12]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ensemble"] = int(self.ensemble)
        d["bin_edges"] = list(self.bin_edges)
        d["c_range"] = list(self.c_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        d = dict(d)
        d["bin_edges"] = tuple(d["bin_edges"])
        d["c_range"] = tuple(d.get("c_range", (0.0, 1.0)))
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class OrbitEstimate:
    spectrum: Spectrum
    concurrence: float
    n_total: int
    n_separable: int

    @property
    def p_hat(self) -> float:
        return self.n_separable / self.n_total

    @property
    def stderr(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1.0 - p) / self.n_total)


@dataclass(frozen=True)
class BinnedCurve:
    """Per-bin separability tallies over concurrence.

    ``chunks`` records which chunk indices of the plan contributed, so that
    partial results can be merged and resumed without double counting.
    """

    edges: np.ndarray
    n_total: np.ndarray
    n_sep: np.ndarray
    beta: int
    fingerprint: str = ""
    chunks: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=float))
        object.__setattr__(self, "n_total", np.asarray(self.n_total, dtype=np.int64))
        object.__setattr__(self, "n_sep", np.asarray(self.n_sep, dtype=np.int64))
        object.__setattr__(self, "chunks", frozenset(int(c) for c in self.chunks))
        if self.n_total.shape != (len(self.edges) - 1,) or self.n_sep.shape != self.n_total.shape:
            raise ValidationError("tally arrays do not match the bin grid")
        if np.any(self.n_sep < 0) or np.any(self.n_sep > self.n_total):
            raise ValidationError("need 0 <= n_sep <= n_total in every bin")

    @classmethod
    def empty(cls, plan: SamplingPlan) -> "BinnedCurve":
        nb = plan.n_bins
        return cls(plan.bin_edges, np.zeros(nb), np.zeros(nb), int(plan.ensemble), plan.fingerprint())

    @property
    def c_lo(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def c_hi(self) -> np.ndarray:
        return self.edges[1:]

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def empty_bins(self) -> np.ndarray:
        return self.n_total == 0

    @property
    def sigma_hat(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n_total > 0, self.n_sep / np.maximum(self.n_total, 1), np.nan)

    @property
    def stderr(self) -> np.ndarray:
        p = self.sigma_hat
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1.0 - p) / self.n_total)

    def bin_index(self, c: float) -> int:
        return int(np.clip(np.searchsorted(self.edges, c, side="right") - 1, 0, len(self.n_total) - 1))

    def same_tallies(self, other: "BinnedCurve") -> bool:
        return (
            np.array_equal(self.edges, other.edges)
            and np.array_equal(self.n_total, other.n_total)
            and np.array_equal(self.n_sep, other.n_sep)
        )


def merge_partials(parts) -> BinnedCurve:
    """Sum tallies of curves from the same plan.  Associative and commutative."""
    parts = list(parts)
    if not parts:
        raise ValidationError("nothing to merge")
    first = parts[0]
    n_total = first.n_total.copy()
    n_sep = first.n_sep.copy()
    chunks = set(first.chunks)
    for p in parts[1:]:
        if not np.array_equal(p.edges, first.edges):
            raise ValidationError("cannot merge curves on different bin grids")
        if p.fingerprint != first.fingerprint or p.beta != first.beta:
            raise ValidationError("cannot merge curves from different plans")
        if chunks & p.chunks:
            raise ValidationError(f"chunks merged twice: {sorted(chunks & p.chunks)}")
        n_total += p.n_total
        n_sep += p.n_sep
        chunks |= p.chunks
    return BinnedCurve(first.edges, n_total, n_sep, first.beta, first.fingerprint, frozenset(chunks))


# -- spectral samplers ------------------------------------------------------


def _sort_desc(x: np.ndarray) -> np.ndarray:
    return -np.sort(-x, axis=-1)


def _simplex_from_uniforms(u: np.ndarray) -> np.ndarray:
    cuts = np.sort(u, axis=-1)
    pad = np.concatenate([np.zeros(u.shape[:-1] + (1,)), cuts, np.ones(u.shape[:-1] + (1,))], axis=-1)
    return _sort_desc(np.diff(pad, axis=-1))


def simplex_uniform_batch(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` spectra uniform on the simplex, each row sorted descending."""
    return _simplex_from_uniforms(rng.random((n, 3)))


def dirichlet_half_batch(rng: np.random.Generator, n: int) -> np.ndarray:
    return _sort_desc(rng.dirichlet([0.5] * 4, size=n))


def _dirichlet_half_from_uniforms(u: np.ndarray) -> np.ndarray:
    g = special.gammaincinv(0.5, u)
    return _sort_desc(g / g.sum(axis=-1, keepdims=True))


def sample_simplex_uniform(rng: np.random.Generator) -> Spectrum:
    """Lebesgue-uniform point of the 3-simplex, sorted descending."""
    return Spectrum(tuple(simplex_uniform_batch(rng, 1)[0]))


def _iso_solve(c, l2, l4):
    # l3 from 1 - c directly: 1 - l2 - l4 - c cancels catastrophically near c = 1
    r = np.sqrt(l2) + np.sqrt(l4)
    l3 = ((1.0 - c) - r * r) / 2.0
    return l3 + c + 2.0 * np.sqrt(l2 * l4), l3


def iso_concurrence_batch(
    c, rng: np.random.Generator, n: int | None = None, base: str = "uniform-simplex"
) -> np.ndarray:
    """Spectra with prescribed maximal concurrence ``c`` (scalar or per-row array).

    Given C, ``l1`` and ``l3`` are affine in ``(l2, l4)`` with constant
    Jacobian, so a simplex law conditioned on C has the same density in
    ``(l2, l4)`` as on the simplex.  ``base="uniform-simplex"``: ``(l2, l4)``
    uniform on the admissible region, by rejection from the box
    ``[0, min(1/2, 1-c)] x [0, min(1/4, (1-c)/3)]``.  ``base="dirichlet-half"``:
    density proportional to ``prod(l)^(-1/2)``, see :func:`_iso_dirichlet_half`.
    """
    if base not in ISO_BASES:
        raise ValidationError(f"unknown iso-concurrence base law {base!r}")
    c = np.asarray(c, dtype=float)
    if n is not None:
        c = np.broadcast_to(c, (n,)).copy()
    c = np.atleast_1d(c)
    if np.any((c < 0.0) | (c > 1.0)):
        raise ValidationError("concurrence must lie in [0, 1]")
    out = np.empty((len(c), 4))
    pure = c >= 1.0
    out[pure] = (1.0, 0.0, 0.0, 0.0)
    todo = np.flatnonzero(~pure)
    if base == "dirichlet-half":
        _iso_dirichlet_half(c, rng, todo, out)
        return out
    w2 = np.minimum(0.5, 1.0 - c)
    w4 = np.minimum(0.25, (1.0 - c) / 3.0)
    while todo.size:
        u = rng.random((todo.size, 2))
        l2 = u[:, 0] * w2[todo]
        l4 = u[:, 1] * w4[todo]
        cc = c[todo]
        l1, l3 = _iso_solve(cc, l2, l4)
        ok = (l1 >= l2) & (l2 >= l3) & (l3 >= l4)
        out[todo[ok]] = np.stack([l1[ok], l2[ok], l3[ok], l4[ok]], axis=1)
        todo = todo[~ok]
    return out


def _iso_dirichlet_half(c, rng, todo, out) -> None:
    # With a = sqrt(1-c), l2 = s^2, l4 = t^2 and s = a - w^2 - t one gets
    # l3 = w^2 (2a - w^2) / 2, and the density in (w, t) is proportional to
    # (l1 (2a - w^2))^(-1/2) <= 2 / sqrt(a): bounded, so plain rejection works.
    a = np.sqrt(1.0 - c)
    while todo.size:
        aa = a[todo]
        u = rng.random((todo.size, 3))
        w = u[:, 0] * np.sqrt(aa)
        t = u[:, 1] * aa / 2.0
        s = aa - w * w - t
        l2, l4 = s * s, t * t
        l3 = w * w * (2.0 * aa - w * w) / 2.0
        l1 = 1.0 - l2 - l3 - l4
        g = 0.5 * np.sqrt(aa / (np.maximum(l1, 1e-300) * (2.0 * aa - w * w)))
        ok = (s >= 0) & (l1 >= l2) & (l2 >= l3) & (l3 >= l4) & (u[:, 2] < g)
        out[todo[ok]] = np.stack([l1[ok], l2[ok], l3[ok], l4[ok]], axis=1)
        todo = todo[~ok]


def sample_iso_concurrence(c: float, rng: np.random.Generator, base: str = "uniform-simplex") -> Spectrum:
    """A spectrum whose maximal concurrence equals ``c``."""
    lam = iso_concurrence_batch(float(c), rng, 1, base)[0]
    return Spectrum(tuple(lam))


def iso_spectrum(c: float, l2: float, l4: float) -> Spectrum:
    """The unique spectrum with concurrence ``c`` and given ``(l2, l4)``."""
    l1, l3 = _iso_solve(c, l2, l4)
    return Spectrum((float(l1), float(l2), float(l3), float(l4)))


# -- orbit estimation -------------------------------------------------------


def separable_counts(lam: np.ndarray, ens: Ensemble, rng: np.random.Generator, orbits: int = 1) -> np.ndarray:
    """Number of separable orbit draws, out of ``orbits``, for each row of ``lam``."""
    lam = np.asarray(lam, dtype=float)
    rows = np.repeat(lam, orbits, axis=0)
    hits = np.empty(len(rows), dtype=bool)
    for start in range(0, len(rows), _BLOCK):
        block = rows[start : start + _BLOCK]
        hits[start : start + len(block)] = separable_mask(orbit_points(block, ens, rng))
    return hits.reshape(len(lam), orbits).sum(axis=1)


def estimate_orbit_probability(s: Spectrum, ens: Ensemble, n: int, rng: np.random.Generator) -> OrbitEstimate:
    """Fraction of ``n`` Haar orbit points of ``diag(s)`` that pass the PPT test."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not isinstance(s, Spectrum):
        s = Spectrum(tuple(s))
    hits = int(separable_counts(s.as_array()[None, :], Ensemble.parse(ens), rng, n)[0])
    return OrbitEstimate(s, max_concurrence(s), n, hits)


def _chunk_spectra(plan: SamplingPlan, i: int, rng: np.random.Generator) -> np.ndarray:
    start, stop = plan.chunk_bounds(i)
    m = stop - start
    if plan.spectral_law == "iso-concurrence":
        if plan.iso_c is not None:
            return iso_concurrence_batch(plan.iso_c, rng, m, plan.iso_base)
        strata = np.asarray(plan._strata())
        bins = strata[np.arange(start, stop) % len(strata)]
        e = np.asarray(plan.bin_edges)
        c = e[bins] + rng.random(m) * (e[bins + 1] - e[bins])
        return iso_concurrence_batch(c, rng, base=plan.iso_base)
    if plan.qmc:
        dim = 3 if plan.spectral_law == "uniform-simplex" else 4
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sob = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(plan.seed))
            if start:
                sob.fast_forward(start)
            u = sob.random(m)
        if dim == 3:
            return _simplex_from_uniforms(u)
        return _dirichlet_half_from_uniforms(np.clip(u, 1e-300, 1.0))
    if plan.spectral_law == "uniform-simplex":
        return simplex_uniform_batch(rng, m)
    return dirichlet_half_batch(rng, m)


def run_chunk(plan: SamplingPlan, i: int) -> BinnedCurve:
    """Tallies produced by chunk ``i`` of ``plan``."""
    if not 0 <= i < plan.n_chunks:
        raise ValidationError(f"chunk {i} out of range")
    rng = chunk_rng(plan.seed, i)
    lam = _chunk_spectra(plan, i, rng)
    c = max_concurrence_batch(lam)
    hits = separable_counts(lam, plan.ensemble, rng, plan.orbits_per_spectrum)
    edges = np.asarray(plan.bin_edges)
    idx = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, plan.n_bins - 1)
    n_total = np.bincount(idx, minlength=plan.n_bins) * plan.orbits_per_spectrum
    n_sep = np.bincount(idx, weights=hits, minlength=plan.n_bins).astype(np.int64)
    return BinnedCurve(edges, n_total, n_sep, int(plan.ensemble), plan.fingerprint(), frozenset([i]))


def _run_chunk_args(args):
    return run_chunk(*args)


def estimate_curve(
    plan: SamplingPlan,
    workers: int = 1,
    resume: BinnedCurve | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    checkpoint_every: int = 16,
    stop_after: int | None = None,
) -> BinnedCurve:
    """Run (or continue) every chunk of ``plan`` and merge the tallies.

    ``resume`` supplies already-completed chunks, typically from
    :func:`checkpoint_load`.  With ``checkpoint_path`` the running total is
    saved every ``checkpoint_every`` chunks.  ``stop_after`` limits how many
    new chunks are processed in this call, which is how interruption is
    simulated in tests.
    """
    fp = plan.fingerprint()
    curve = BinnedCurve.empty(plan) if resume is None else resume
    if curve.fingerprint != fp:
        raise ValidationError("resume checkpoint belongs to a different plan")
    todo = [i for i in range(plan.n_chunks) if i not in curve.chunks]
    if stop_after is not None:
        todo = todo[:stop_after]

    def batches():
        step = max(1, checkpoint_every)
        for k in range(0, len(todo), step):
            yield todo[k : k + step]

    pool = None
    if workers > 1 and len(todo) > 1:
        # spawn: forking after BLAS threads start can deadlock
        pool = ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn"))
    try:
        for batch in batches():
            if pool is None:
                parts = [run_chunk(plan, i) for i in batch]
            else:
                parts = list(pool.map(_run_chunk_args, [(plan, i) for i in batch]))
            curve = merge_partials([curve, *parts])
            if checkpoint_path is not None:
                checkpoint_save(curve, checkpoint_path, plan)
    finally:
        if pool is not None:
            pool.shutdown()
    if checkpoint_path is not None and not todo:
        checkpoint_save(curve, checkpoint_path, plan)
    return curve


def is_complete(curve: BinnedCurve, plan: SamplingPlan) -> bool:
    return curve.chunks == frozenset(range(plan.n_chunks))


# -- persistence -------------------------------------------------------------


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_save(curve: BinnedCurve, path, plan: SamplingPlan) -> None:
    if curve.fingerprint != plan.fingerprint():
        raise ValidationError("curve does not belong to this plan")
    doc = {
        "plan": plan.to_dict(),
        "fingerprint": curve.fingerprint,
        "completed_chunks": sorted(curve.chunks),
        "bins": [
            {"c_lo": float(lo), "c_hi": float(hi), "n_total": int(nt), "n_sep": int(ns)}
            for lo, hi, nt, ns in zip(curve.c_lo, curve.c_hi, curve.n_total, curve.n_sep)
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


def checkpoint_load(path, plan: SamplingPlan | None = None) -> BinnedCurve:
    """Read a checkpoint; with ``plan`` given, refuse one from another plan."""
    doc = json.loads(Path(path).read_text())
    stored = SamplingPlan.from_dict(doc["plan"])
    if stored.fingerprint() != doc["fingerprint"]:
        raise ValidationError("checkpoint fingerprint does not match its own plan")
    if plan is not None and plan.fingerprint() != doc["fingerprint"]:
        raise ValidationError("checkpoint fingerprint does not match the requested plan")
    bins = doc["bins"]
    edges = [b["c_lo"] for b in bins] + [bins[-1]["c_hi"]]
    return BinnedCurve(
        edges,
        [b["n_total"] for b in bins],
        [b["n_sep"] for b in bins],
        int(stored.ensemble),
        doc["fingerprint"],
        frozenset(doc["completed_chunks"]),
    )


def checkpoint_plan(path) -> SamplingPlan:
    return SamplingPlan.from_dict(json.loads(Path(path).read_text())["plan"])


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def curve_to_csv(curve: BinnedCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for lo, hi, nt, ns, s, e in zip(
        curve.c_lo, curve.c_hi, curve.n_total, curve.n_sep, curve.sigma_hat, curve.stderr
    ):
        w.writerow([curve.beta, fmt17(lo), fmt17(hi), int(nt), int(ns), fmt17(s), fmt17(e)])
    return buf.getvalue()


def write_curve_csv(curve: BinnedCurve, path) -> None:
    atomic_write_text(path, curve_to_csv(curve))


def read_curve_csv(path) -> BinnedCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: no bins")
    missing = set(CURVE_HEADER) - set(rows[0])
    if missing:
        raise ValidationError(f"{path}: missing columns {sorted(missing)}")
    betas = {int(r["beta"]) for r in rows}
    if len(betas) != 1:
        raise ValidationError(f"{path}: mixed beta values")
    edges = [float(r["c_lo"]) for r in rows] + [float(rows[-1]["c_hi"])]
    return BinnedCurve(
        edges, [int(r["n_total"]) for r in rows], [int(r["n_sep"]) for r in rows], betas.pop()
    )
