"""Hilbert-Schmidt and Bures eigenvalue weights and importance-sampled integrals.

Weights are unnormalized; every quantity computed from them is a ratio of
weighted sums, so normalization constants cancel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .estimator import chunk_rng
from .qstate import Ensemble, Spectrum, ValidationError, max_concurrence_batch

PAPER_SIGMA_HALF = {Ensemble.REAL: 0.1803748, Ensemble.COMPLEX: 0.0651586}

_PAIRS = list(combinations(range(4), 2))
_BLOCK = 1 << 20


class Metric(str, enum.Enum):
    HS = "hilbert-schmidt"
    BURES = "bures"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        if key in ("hs", "hilbert-schmidt", "hilbert_schmidt"):
            return cls.HS
        if key == "bures":
            return cls.BURES
        raise ValidationError(f"unknown metric {value!r}")

    @property
    def short(self) -> str:
        return "hs" if self is Metric.HS else "bures"


class SingularSpectrum(ValidationError):
    """Bures weight requested at a spectrum with a zero eigenvalue."""


def _vandermonde(lam: np.ndarray) -> np.ndarray:
    v = np.ones(lam.shape[:-1])
    for i, j in _PAIRS:
        v = v * np.abs(lam[..., i] - lam[..., j])
    return v


def _pair_sums(lam: np.ndarray) -> np.ndarray:
    p = np.ones(lam.shape[:-1])
    for i, j in _PAIRS:
        p = p * (lam[..., i] + lam[..., j])
    return p


def density_weights(lam: np.ndarray, metric: Metric, ens: Ensemble) -> np.ndarray:
    """Unnormalized eigenvalue density for rows of ``lam`` (any order)."""
    lam = np.asarray(lam, dtype=float)
    beta = Ensemble.parse(ens).beta
    vd = _vandermonde(lam) ** beta
    if Metric.parse(metric) is Metric.HS:
        return vd
    prod = np.prod(lam, axis=-1)
    if np.any(prod <= 0.0):
        raise SingularSpectrum("Bures weight is singular at a zero eigenvalue")
    return vd / _pair_sums(lam) ** (beta / 2.0) / np.sqrt(prod)


def eig_density_weight(s: Spectrum, metric: Metric, ens: Ensemble) -> float:
    """HS: ``prod |li - lj|^beta``.  Bures: that over ``prod (li + lj)^(beta/2)``,
    times ``prod(li)^(-1/2)``."""
    if not isinstance(s, Spectrum):
        s = Spectrum.from_unsorted(s)
    return float(density_weights(s.as_array(), metric, ens))


def _proposal_weights(lam: np.ndarray, metric: Metric, beta: int, proposal: str) -> np.ndarray:
    # target density over the proposal density, both unnormalized
    vd = _vandermonde(lam) ** beta
    if metric is Metric.HS:
        if proposal == "uniform":
            return vd
        return vd * np.sqrt(np.prod(lam, axis=-1))
    bures_core = vd / _pair_sums(lam) ** (beta / 2.0)
    if proposal == "dirichlet-half":
        return bures_core
    return bures_core / np.sqrt(np.prod(lam, axis=-1))


def _draw(rng: np.random.Generator, n: int, proposal: str) -> np.ndarray:
    alpha = 1.0 if proposal == "uniform" else 0.5
    return rng.dirichlet([alpha] * 4, size=n)


def default_proposal(metric: Metric) -> str:
    return "uniform" if Metric.parse(metric) is Metric.HS else "dirichlet-half"


@dataclass
class _Sums:
    """Running weighted sums, enough for ratio estimates and delta-method errors."""

    n: int = 0
    n_region: int = 0
    w: float = 0.0
    w2: float = 0.0
    wm: float = 0.0
    w2m: float = 0.0
    wf: float = 0.0
    w2f: float = 0.0
    w2f2: float = 0.0

    def add(self, w, m, f):
        wm = w * m
        self.n += len(w)
        self.n_region += int(np.count_nonzero(m))
        self.w += float(w.sum())
        self.w2 += float((w * w).sum())
        self.wm += float(wm.sum())
        self.w2m += float((wm * wm).sum())
        self.wf += float((wm * f).sum())
        self.w2f += float((wm * wm * f).sum())
        self.w2f2 += float((wm * wm * f * f).sum())


def _accumulate(metric, ens, n, rng, threshold, exponent, proposal) -> _Sums:
    metric = Metric.parse(metric)
    beta = Ensemble.parse(ens).beta
    proposal = proposal or default_proposal(metric)
    if proposal not in ("uniform", "dirichlet-half"):
        raise ValidationError(f"unknown proposal {proposal!r}")
    if n < 1:
        raise ValidationError("n must be >= 1")
    sums = _Sums()
    for k, start in enumerate(range(0, n, _BLOCK)):
        m = min(_BLOCK, n - start)
        g = chunk_rng(rng, k) if isinstance(rng, (int, np.integer)) else rng
        lam = -np.sort(-_draw(g, m, proposal), axis=1)
        w = _proposal_weights(lam, metric, beta, proposal)
        c = max_concurrence_batch(lam)
        inside = c >= threshold
        f = np.where(inside, (2.0 - 2.0 * c) ** exponent, 0.0)
        sums.add(w, inside.astype(float), f)
    return sums


@dataclass(frozen=True)
class ContributionResult:
    metric: Metric
    ensemble: Ensemble
    estimate: float
    stderr: float
    n_samples: int
    sigma_half_plugin: float
    region_mass: float
    n_region: int
    threshold: float = 0.5
    exponent: float = 1.5
    normalization: str = "region"

    @property
    def flagged(self) -> bool:
        """True when too few samples landed in the region to trust the error bar."""
        return self.n_region < 30

    def csv_row(self) -> list[str]:
        return [
            self.metric.short,
            str(int(self.ensemble)),
            format(self.sigma_half_plugin, ".17g"),
            format(self.estimate, ".17g"),
            format(self.stderr, ".17g"),
            str(self.n_samples),
        ]


CONTRIB_HEADER = ("metric", "beta", "sigma_half", "estimate", "stderr", "n_samples")


def upper_range_contribution(
    metric: Metric,
    ens: Ensemble,
    sigma_half: float | None,
    n: int,
    rng: np.random.Generator | int,
    *,
    threshold: float = 0.5,
    exponent: float | None = None,
    normalization: str = "region",
    proposal: str | None = None,
) -> ContributionResult:
    """Separability-probability contribution of spectra with ``C >= threshold``.

    The separability function on that range is modelled as
    ``sigma_half * (2 - 2C)^(3 beta / 2)``.  With ``normalization="region"``
    the weighted average is taken over the region itself, which is the
    convention that reproduces the published contribution values; with
    ``"total"`` it is averaged over the whole simplex.  Passing an integer as
    ``rng`` uses the chunked deterministic streams of the estimator.
    """
    ens = Ensemble.parse(ens)
    metric = Metric.parse(metric)
    if sigma_half is None:
        sigma_half = PAPER_SIGMA_HALF[ens]
    if sigma_half < 0:
        raise ValidationError("sigma_half must be nonnegative")
    if normalization not in ("region", "total"):
        raise ValidationError(f"unknown normalization {normalization!r}")
    if exponent is None:
        exponent = 1.5 * ens.beta
    s = _accumulate(metric, ens, n, rng, threshold, exponent, proposal)
    mass = s.wm / s.w if s.w > 0 else 0.0
    if normalization == "region":
        denom, d2 = s.wm, s.w2m
    else:
        denom, d2 = s.w, s.w2
    if denom > 0:
        mu = s.wf / denom
        # delta-method variance of a self-normalized ratio; f vanishes outside the region
        var = s.w2f2 - 2 * mu * s.w2f + mu * mu * d2
        se = math.sqrt(max(var, 0.0)) / denom
    else:
        mu, se = 0.0, math.inf
    return ContributionResult(
        metric=metric,
        ensemble=ens,
        estimate=sigma_half * mu,
        stderr=sigma_half * se,
        n_samples=n,
        sigma_half_plugin=float(sigma_half),
        region_mass=mass,
        n_region=s.n_region,
        threshold=threshold,
        exponent=float(exponent),
        normalization=normalization,
    )


def region_mass(
    metric: Metric,
    ens: Ensemble,
    n: int,
    rng: np.random.Generator | int,
    threshold: float = 0.5,
    proposal: str | None = None,
) -> float:
    """Weighted fraction of spectra with maximal concurrence at least ``threshold``."""
    s = _accumulate(metric, ens, n, rng, threshold, 0.0, proposal)
    return s.wm / s.w
