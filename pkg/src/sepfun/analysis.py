"""Post-processing of binned separability curves.

Normalization at C = 1/2, the squared-real versus complex comparison, power
law fits on the upper half-range, the sigma(1/2) ratio, piecewise-linear
changepoints, curve crossings and the univariance dispersion diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimator import BinnedCurve, chunk_rng, estimate_orbit_probability, iso_concurrence_batch
from .qstate import Ensemble, Spectrum, ValidationError

HALF = 0.5


@dataclass(frozen=True)
class NormalizedCurve:
    """Bin values divided by a reference value taken at C = 1/2 (right limit).

    ``n_total``/``n_sep`` are kept when the curve came from tallies; synthetic
    curves built with :meth:`from_values` leave them as ``None``.
    """

    edges: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    reference_value: float
    reference_index: int
    beta: int = 0
    n_total: np.ndarray | None = None
    n_sep: np.ndarray | None = None
    reference_side: str = "right-limit"

    @classmethod
    def from_values(cls, edges, values, stderr=None, beta: int = 0) -> "NormalizedCurve":
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values, dtype=float)
        stderr = np.zeros_like(values) if stderr is None else np.asarray(stderr, dtype=float)
        ref = _half_index(edges)
        return cls(edges, values, stderr, 1.0, ref, beta)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def c_lo(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def c_hi(self) -> np.ndarray:
        return self.edges[1:]


def _half_index(edges: np.ndarray) -> int:
    hits = np.flatnonzero(np.isclose(edges[:-1], HALF, atol=1e-12))
    if hits.size == 0:
        raise ValidationError("bin grid has no bin starting at C = 1/2")
    return int(hits[0])


def _series(curve) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(curve, NormalizedCurve):
        return curve.edges, curve.values, curve.stderr
    return curve.edges, curve.sigma_hat, curve.stderr


def normalize_at_half(curve: BinnedCurve | NormalizedCurve, reference_value: float | None = None) -> NormalizedCurve:
    """Divide a curve by its value in the first bin at or above C = 1/2.

    ``reference_value`` substitutes a plug-in for the estimated reference.
    Already normalized curves are renormalized by their own reference bin,
    which leaves them unchanged.
    """
    edges, values, se = _series(curve)
    ref = _half_index(edges)
    if reference_value is None:
        reference_value = values[ref]
        if not np.isfinite(reference_value) or reference_value <= 0:
            raise ValidationError("reference bin at C = 1/2 is empty or zero")
    elif reference_value <= 0:
        raise ValidationError("reference value must be positive")
    if isinstance(curve, NormalizedCurve):
        return NormalizedCurve(
            edges,
            values / reference_value,
            se / reference_value,
            curve.reference_value * reference_value,
            ref,
            curve.beta,
            curve.n_total,
            curve.n_sep,
        )
    return NormalizedCurve(
        edges,
        values / reference_value,
        se / reference_value,
        float(reference_value),
        ref,
        curve.beta,
        curve.n_total,
        curve.n_sep,
    )


def left_right_at_half(curve: BinnedCurve) -> tuple[float, float]:
    """Estimates in the bins just below and just above C = 1/2."""
    ref = _half_index(curve.edges)
    s = curve.sigma_hat
    return float(s[ref - 1]), float(s[ref])


@dataclass(frozen=True)
class DifferenceCurve:
    c_lo: np.ndarray
    c_hi: np.ndarray
    diff: np.ndarray
    stderr: np.ndarray

    def sup_norm(self) -> float:
        d = np.abs(self.diff[np.isfinite(self.diff)])
        return float(d.max()) if d.size else math.nan


def dyson_difference_curve(real_n: NormalizedCurve, cplx_n: NormalizedCurve) -> DifferenceCurve:
    """Per bin on [1/2, 1]: (normalized real)^2 - (normalized complex)."""
    if not np.array_equal(real_n.edges, cplx_n.edges):
        raise ValidationError("curves are on different bin grids")
    keep = real_n.c_lo >= HALF - 1e-12
    x, sx = real_n.values[keep], real_n.stderr[keep]
    y, sy = cplx_n.values[keep], cplx_n.stderr[keep]
    return DifferenceCurve(
        real_n.c_lo[keep],
        real_n.c_hi[keep],
        x * x - y,
        np.sqrt((2 * x * sx) ** 2 + sy**2),
    )


@dataclass(frozen=True)
class PowerFitResult:
    amplitude: float
    exponent: float
    residual_sup: float
    window: tuple[float, float]
    n_bins: int

    def csv_row(self, ensemble) -> list[str]:
        return [
            str(ensemble),
            format(self.window[0], ".17g"),
            format(self.window[1], ".17g"),
            format(self.amplitude, ".17g"),
            format(self.exponent, ".17g"),
            format(self.residual_sup, ".17g"),
        ]


FIT_HEADER = ("ensemble", "window_lo", "window_hi", "amplitude", "exponent", "residual_sup")


def fit_power_form(curve: NormalizedCurve, window: tuple[float, float] = (HALF, 1.0), min_bins: int = 10) -> PowerFitResult:
    """Fit ``A (2 - 2C)^p`` by weighted least squares in log space.

    Points sit at bin centres.  Weights are inverse squared relative standard
    errors; if any bin in the window lacks an error estimate the fit is
    unweighted.  Bins with zero estimate are left out of the fit but enter the
    residual through a one-sided 95% binomial upper bound.
    """
    lo, hi = window
    if lo < HALF - 1e-12 or hi > 1.0 + 1e-12 or lo >= hi:
        raise ValidationError("fit window must lie inside [1/2, 1]")
    inwin = (curve.c_lo >= lo - 1e-12) & (curve.c_hi <= hi + 1e-12)
    nonempty = inwin & np.isfinite(curve.values)
    if curve.n_total is not None:
        nonempty &= curve.n_total > 0
    pos = nonempty & (curve.values > 0)
    if pos.sum() < min_bins:
        raise ValidationError(f"need {min_bins} non-empty bins in the window, have {int(pos.sum())}")
    c = curve.centers[pos]
    x = np.log(2.0 - 2.0 * c)
    y = np.log(curve.values[pos])
    rel = curve.stderr[pos] / curve.values[pos]
    w = 1.0 / rel**2 if np.all(rel > 0) else np.ones_like(x)
    sw = np.sqrt(w)
    design = np.stack([np.ones_like(x), x], axis=1) * sw[:, None]
    (log_a, p), *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    a = float(np.exp(log_a))
    model = a * (2.0 - 2.0 * curve.centers) ** p
    resid = np.abs(model - curve.values)
    zero = nonempty & (curve.values <= 0)
    if zero.any() and curve.n_total is not None:
        upper = (1.0 - 0.05 ** (1.0 / curve.n_total[zero])) / curve.reference_value
        resid[zero] = np.maximum(0.0, model[zero] - upper)
    sup = float(resid[nonempty].max())
    return PowerFitResult(a, float(p), sup, (float(lo), float(hi)), int(pos.sum()))


def ratio_statistic(sigma_half_real: float, sigma_half_cplx: float) -> float:
    """``sigma_complex(1/2) / sigma_real(1/2)^2``."""
    if sigma_half_real <= 0 or sigma_half_cplx <= 0:
        raise ValidationError("ratio inputs must be positive")
    return sigma_half_cplx / sigma_half_real**2


# -- changepoints -------------------------------------------------------------


@dataclass(frozen=True)
class Changepoint:
    location: float
    jump_size: float  # left limit minus right limit
    relative_jump: float  # jump over the left limit
    relative_jump_right: float
    left_value: float
    right_value: float
    z_score: float


@dataclass(frozen=True)
class Segment:
    start: float
    stop: float
    intercept: float
    slope: float
    n_bins: int


@dataclass
class ChangepointReport:
    changepoints: list[Changepoint]
    segments: list[Segment]
    kinks: list[float] = field(default_factory=list)

    @property
    def locations(self) -> list[float]:
        return [cp.location for cp in self.changepoints]

    def nearest(self, c: float) -> Changepoint | None:
        if not self.changepoints:
            return None
        return min(self.changepoints, key=lambda cp: abs(cp.location - c))


def _line_stats(x, y, w):
    # weighted moments -> (intercept, slope, chi2, var_fn) for a line fit
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    sxy = (w * (x - xm) * (y - ym)).sum()
    slope = sxy / sxx if sxx > 0 else 0.0
    intercept = ym - slope * xm
    chi2 = float((w * (y - intercept - slope * x) ** 2).sum())
    return intercept, slope, chi2, sw, xm, sxx


def segment_piecewise_linear(x, y, var, penalty: float | None = None, min_size: int = 3) -> list[int]:
    """Optimal partition of ``(x, y)`` into linear pieces by dynamic programming.

    Minimizes total chi-square plus ``penalty`` per extra segment; returns
    the start indices of segments after the first.  The default penalty is
    ``3 log n`` (slope, intercept and location per breakpoint).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = 1.0 / np.asarray(var, float)
    n = len(x)
    if penalty is None:
        penalty = 3.0 * math.log(max(n, 2))
    # prefix sums of weighted moments
    cs = [np.concatenate([[0.0], np.cumsum(a)]) for a in (w, w * x, w * y, w * x * x, w * x * y, w * y * y)]

    def cost(i, j):
        s0, s1, s2, s3, s4, s5 = (c[j] - c[i] for c in cs)
        det = s0 * s3 - s1 * s1
        if det <= 1e-300 * max(1.0, s0 * s3):
            return max(s5 - s2 * s2 / s0, 0.0)
        b = (s0 * s4 - s1 * s2) / det
        a = (s2 - b * s1) / s0
        return max(s5 - 2 * a * s2 - 2 * b * s4 + a * a * s0 + 2 * a * b * s1 + b * b * s3, 0.0)

    best = np.full(n + 1, np.inf)
    prev = np.zeros(n + 1, dtype=int)
    best[0] = -penalty
    for j in range(min_size, n + 1):
        for i in range(0, j - min_size + 1):
            if not np.isfinite(best[i]):
                continue
            v = best[i] + cost(i, j) + penalty
            if v < best[j]:
                best[j] = v
                prev[j] = i
    cuts = []
    j = n
    while j > 0:
        i = prev[j]
        if i > 0:
            cuts.append(i)
        j = i
    return sorted(cuts)


def detect_changepoints(
    curve: BinnedCurve | NormalizedCurve,
    domain: tuple[float, float] = (0.0, 1.0),
    penalty: float | None = None,
    z: float = 5.0,
    min_relative_jump: float = 0.05,
    min_size: int = 3,
) -> ChangepointReport:
    """Piecewise-linear segmentation with discontinuities reported separately.

    Breakpoints sit at bin edges.  A breakpoint counts as a discontinuity
    when the two adjacent lines disagree at the edge by more than ``z``
    standard errors and by at least ``min_relative_jump`` of the left value;
    the others are listed as kinks (slope changes only).
    """
    edges, values, se = _series(curve)
    lo, hi = domain
    c_lo, c_hi = edges[:-1], edges[1:]
    keep = (c_lo >= lo - 1e-12) & (c_hi <= hi + 1e-12) & np.isfinite(values)
    n_tot = getattr(curve, "n_total", None)
    if n_tot is not None:
        keep &= n_tot > 0
    idx = np.flatnonzero(keep)
    if idx.size < 2 * min_size:
        return ChangepointReport([], [])
    x = 0.5 * (c_lo + c_hi)[idx]
    y = values[idx]
    var = se[idx] ** 2
    n_sep = getattr(curve, "n_sep", None)
    if n_tot is not None and n_sep is not None:
        n = n_tot[idx].astype(float)
        scale = getattr(curve, "reference_value", 1.0)
        # add-one smoothing keeps bins with p in {0, 1} from getting infinite weight
        pt = (n_sep[idx] + 1.0) / (n + 2.0)
        var = np.maximum(var, pt * (1.0 - pt) / n / scale**2)
    var = np.maximum(var, 1e-24)
    cuts = segment_piecewise_linear(x, y, var, penalty, min_size)
    bounds = [0, *cuts, len(x)]
    fits = []
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        st = _line_stats(x[a:b], y[a:b], 1.0 / var[a:b])
        fits.append(st)
        segments.append(Segment(float(c_lo[idx[a]]), float(c_hi[idx[b - 1]]), st[0], st[1], b - a))
    cps, kinks = [], []
    for k, cut in enumerate(cuts):
        loc = float(c_lo[idx[cut]])
        left, right = fits[k], fits[k + 1]
        lv = left[0] + left[1] * loc
        rv = right[0] + right[1] * loc

        def pvar(st):
            _, _, _, sw, xm, sxx = st
            return 1.0 / sw + ((loc - xm) ** 2 / sxx if sxx > 0 else 0.0)

        jump = lv - rv
        zs = abs(jump) / math.sqrt(pvar(left) + pvar(right))
        rel = jump / lv if lv != 0 else math.inf
        if zs > z and abs(rel) >= min_relative_jump:
            cps.append(Changepoint(loc, jump, rel, jump / rv if rv != 0 else math.inf, lv, rv, zs))
        else:
            kinks.append(loc)
    return ChangepointReport(cps, segments, kinks)


# -- crossings ----------------------------------------------------------------


@dataclass(frozen=True)
class IntersectionResult:
    locations: tuple[float, ...]

    @property
    def location(self) -> float | None:
        return self.locations[0] if self.locations else None

    @property
    def multiple(self) -> bool:
        return len(self.locations) > 1


def intersection_locator(
    real_curve: BinnedCurve | NormalizedCurve,
    cplx_curve: BinnedCurve | NormalizedCurve,
    domain: tuple[float, float] = (0.0, HALF),
    z: float = 3.0,
) -> IntersectionResult:
    """Where ``real - complex`` changes sign between bin centres.

    Only bins where the difference is nonzero by more than ``z`` standard
    errors carry a sign, so noise around a tie does not produce crossings.
    Between two significant bins of opposite sign the root of a weighted
    line through the differences is returned; for adjacent bins this is plain
    linear interpolation.
    """
    e1, v1, s1 = _series(real_curve)
    e2, v2, s2 = _series(cplx_curve)
    if not np.array_equal(e1, e2):
        raise ValidationError("curves are on different bin grids")
    lo, hi = domain
    keep = (e1[:-1] >= lo - 1e-12) & (e1[1:] <= hi + 1e-12) & np.isfinite(v1) & np.isfinite(v2)
    x = (0.5 * (e1[:-1] + e1[1:]))[keep]
    d = (v1 - v2)[keep]
    se = np.sqrt(s1**2 + s2**2)[keep]
    sign = np.where(np.abs(d) > z * se, np.sign(d), 0.0)
    sig = np.flatnonzero(sign != 0)
    roots = []
    for a, b in zip(sig[:-1], sig[1:]):
        if sign[a] == sign[b]:
            continue
        xs, ds = x[a : b + 1], d[a : b + 1]
        if b == a + 1:
            roots.append(float(xs[0] - ds[0] * (xs[1] - xs[0]) / (ds[1] - ds[0])))
            continue
        ww = 1.0 / np.maximum(se[a : b + 1] ** 2, 1e-24)
        icpt, slope, *_ = _line_stats(xs, ds, ww)
        r = -icpt / slope if slope != 0 else 0.5 * (xs[0] + xs[-1])
        roots.append(float(np.clip(r, xs[0], xs[-1])))
    return IntersectionResult(tuple(roots))


# -- univariance ----------------------------------------------------------------


@dataclass(frozen=True)
class DispersionResult:
    concurrence: float
    statistic: float
    dof: int
    p_value: float
    p_hats: tuple[float, ...]
    spectra: tuple[Spectrum, ...]
    n: int

    def null_band(self, level: float = 0.99) -> tuple[float, float]:
        a = (1.0 - level) / 2.0
        return float(stats.chi2.ppf(a, self.dof)), float(stats.chi2.ppf(1 - a, self.dof))


def dispersion_statistic(p_hats, n: int) -> float:
    """Chi-square heterogeneity of k binomial proportions with equal ``n``."""
    p = np.asarray(p_hats, float)
    pbar = p.mean()
    if pbar <= 0.0 or pbar >= 1.0:
        return 0.0
    return float(((p - pbar) ** 2).sum() / (pbar * (1 - pbar) / n))


def univariance_dispersion(
    c: float, k: int, n: int, ens: Ensemble, rng: np.random.Generator | int, base: str = "uniform-simplex"
) -> DispersionResult:
    """Spread of orbit separability probabilities across spectra sharing ``c``.

    Under univariance the statistic is approximately chi-square with
    ``k - 1`` degrees of freedom.  With an integer seed, spectrum ``i`` uses
    chunk stream ``i`` so the result is independent of evaluation order.
    """
    if k < 2:
        raise ValidationError("need at least two spectra")
    ens = Ensemble.parse(ens)
    seeded = isinstance(rng, (int, np.integer))
    spectra, p_hats = [], []
    for i in range(k):
        g = chunk_rng(int(rng), i) if seeded else rng
        lam = iso_concurrence_batch(float(c), g, 1, base)[0]
        est = estimate_orbit_probability(Spectrum(tuple(lam)), ens, n, g)
        spectra.append(est.spectrum)
        p_hats.append(est.p_hat)
    stat = dispersion_statistic(p_hats, n)
    return DispersionResult(
        float(c), stat, k - 1, float(stats.chi2.sf(stat, k - 1)), tuple(p_hats), tuple(spectra), n
    )
