import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepfun.analysis import (
    NormalizedCurve,
    detect_changepoints,
    dispersion_statistic,
    dyson_difference_curve,
    fit_power_form,
    intersection_locator,
    left_right_at_half,
    normalize_at_half,
    ratio_statistic,
    segment_piecewise_linear,
    univariance_dispersion,
)
from sepfun.estimator import BinnedCurve, SamplingPlan, default_edges, estimate_curve
from sepfun.qstate import ValidationError

EDGES = np.array(default_edges())
CENTERS = 0.5 * (EDGES[:-1] + EDGES[1:])


def tally_curve(p, n=10_000, beta=1):
    n_total = np.full(100, n, dtype=np.int64)
    n_sep = np.rint(np.asarray(p) * n).astype(np.int64)
    return BinnedCurve(EDGES, n_total, n_sep, beta, "synthetic", frozenset({0}))


# -- normalization -----------------------------------------------------------------


def test_reference_bin_maps_to_one():
    p = np.linspace(0.9, 0.01, 100)
    nc = normalize_at_half(tally_curve(p))
    assert nc.values[nc.reference_index] == 1.0
    assert nc.reference_index == 50 and nc.c_lo[50] == 0.5
    assert nc.reference_side == "right-limit"


def test_normalization_preserves_ratios():
    c = tally_curve(np.linspace(0.9, 0.01, 100))
    nc = normalize_at_half(c)
    assert nc.values[10] / nc.values[70] == pytest.approx(c.sigma_hat[10] / c.sigma_hat[70], rel=1e-14)


def test_normalization_idempotent():
    nc = normalize_at_half(tally_curve(np.linspace(0.9, 0.01, 100)))
    again = normalize_at_half(nc)
    assert np.array_equal(again.values, nc.values)
    assert again.reference_value == nc.reference_value


def test_plugin_reference_value():
    c = tally_curve(np.full(100, 0.1803748), n=10_000_000)
    nc = normalize_at_half(c, reference_value=0.1803748)
    assert nc.values[50] == pytest.approx(1.0, abs=1e-7)


def test_empty_reference_bin_rejected():
    p = np.full(100, 0.3)
    n_total = np.full(100, 1000)
    n_total[50] = 0
    c = BinnedCurve(EDGES, n_total, np.rint(p * n_total).astype(np.int64), 1, "x", frozenset({0}))
    with pytest.raises(ValidationError):
        normalize_at_half(c)


def test_left_right_limits():
    p = np.where(CENTERS < 0.5, 0.3, 0.2)
    assert left_right_at_half(tally_curve(p)) == (0.3, 0.2)


# -- squared-real versus complex ------------------------------------------------------


def test_difference_of_square_is_zero():
    x = NormalizedCurve.from_values(EDGES, (2 - 2 * CENTERS) ** 1.5 / 0.99**1.5)
    sq = NormalizedCurve.from_values(EDGES, x.values**2)
    d = dyson_difference_curve(x, sq)
    assert np.all(d.diff == 0.0) and d.sup_norm() == 0.0
    assert len(d.diff) == 50 and d.c_lo[0] == 0.5


def test_difference_at_reference_bin_within_stderr():
    rng = np.random.default_rng(2)
    r = normalize_at_half(tally_curve(np.clip(0.2 + 0.01 * rng.standard_normal(100), 0, 1)))
    c = normalize_at_half(tally_curve(np.clip(0.07 + 0.01 * rng.standard_normal(100), 0, 1), beta=2))
    d = dyson_difference_curve(r, c)
    assert abs(d.diff[0]) <= d.stderr[0] + 1e-15


def test_difference_grid_mismatch():
    a = NormalizedCurve.from_values(EDGES, np.ones(100))
    b = NormalizedCurve.from_values(np.linspace(0, 1, 51), np.ones(50))
    with pytest.raises(ValidationError):
        dyson_difference_curve(a, b)


# -- power fits --------------------------------------------------------------------


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_power_fit_recovers_noiseless(a, p):
    curve = NormalizedCurve.from_values(EDGES, a * (2 - 2 * CENTERS) ** p)
    fit = fit_power_form(curve)
    assert fit.amplitude == pytest.approx(a, abs=1e-10)
    assert fit.exponent == pytest.approx(p, abs=1e-10)
    assert fit.residual_sup < 1e-10 and fit.n_bins == 50


def test_power_fit_weighted_noiseless():
    v = (2 - 2 * CENTERS) ** 3
    curve = NormalizedCurve.from_values(EDGES, v, stderr=0.01 * v + 1e-4)
    fit = fit_power_form(curve)
    assert (fit.amplitude, fit.exponent) == pytest.approx((1.0, 3.0), abs=1e-10)


def test_power_fit_window_validation():
    curve = NormalizedCurve.from_values(EDGES, (2 - 2 * CENTERS) ** 3)
    with pytest.raises(ValidationError):
        fit_power_form(curve, window=(0.4, 1.0))
    with pytest.raises(ValidationError):
        fit_power_form(curve, window=(0.5, 0.55))


def test_power_fit_zero_bins_use_upper_bound():
    p = np.where(CENTERS > 0.95, 0.0, 0.2 * np.minimum(1.0, 2 - 2 * CENTERS) ** 3)
    fit = fit_power_form(normalize_at_half(tally_curve(p, n=100_000)))
    assert fit.n_bins == 45 and fit.residual_sup >= 0


# -- ratio -------------------------------------------------------------------------


def test_ratio_published_values():
    assert ratio_statistic(0.1803748, 0.0651586) == pytest.approx(2.00272, abs=1e-5)


@given(st.floats(1e-3, 0.7))
def test_ratio_of_exact_square(x):
    assert ratio_statistic(x, 2 * x * x) == pytest.approx(2.0, rel=1e-14)


def test_ratio_rejects_nonpositive():
    with pytest.raises(ValidationError):
        ratio_statistic(0.0, 0.1)


# -- changepoints --------------------------------------------------------------------


def test_two_segment_jump_recovered():
    p = np.where(CENTERS < 0.5, 0.6 - 0.3 * CENTERS, 0.25 - 0.2 * (CENTERS - 0.5))
    rep = detect_changepoints(tally_curve(p, n=100_000))
    cp = rep.nearest(0.5)
    assert cp is not None and abs(cp.location - 0.5) <= 0.01
    assert cp.relative_jump == pytest.approx((0.45 - 0.25) / 0.45, abs=0.02)
    assert cp.jump_size > 0 and cp.relative_jump_right > cp.relative_jump
    assert rep.locations == sorted(rep.locations)


def test_single_line_has_no_breakpoints():
    rep = detect_changepoints(NormalizedCurve.from_values(EDGES, 0.8 - 0.5 * CENTERS, stderr=np.full(100, 0.01)))
    assert rep.changepoints == [] and rep.kinks == []
    assert len(rep.segments) == 1 and rep.segments[0].slope == pytest.approx(-0.5)


def test_noisy_line_has_no_discontinuities():
    rng = np.random.default_rng(7)
    n = 20_000
    p = 0.5 - 0.4 * CENTERS
    c = BinnedCurve(EDGES, np.full(100, n), rng.binomial(n, p), 1, "x", frozenset({0}))
    assert detect_changepoints(c).changepoints == []


def test_kink_is_not_a_discontinuity():
    p = np.where(CENTERS < 0.3, 0.5, 0.5 - 0.5 * (CENTERS - 0.3))
    rep = detect_changepoints(tally_curve(p, n=1_000_000))
    assert rep.changepoints == []
    assert any(abs(k - 0.3) <= 0.02 for k in rep.kinks)


def test_domain_restriction():
    p = np.where(CENTERS < 0.5, 0.45, 0.25)
    assert detect_changepoints(tally_curve(p), domain=(0.55, 1.0)).changepoints == []


def test_segmentation_exact_steps():
    x = np.arange(30.0)
    y = np.where(x < 10, 1.0, np.where(x < 20, 5.0, 2.0))
    assert segment_piecewise_linear(x, y, np.full(30, 0.01)) == [10, 20]


# -- intersection --------------------------------------------------------------------


def test_lines_cross_at_quarter():
    a = NormalizedCurve.from_values(EDGES, 1.0 - 2.0 * CENTERS, stderr=np.full(100, 1e-4))
    b = NormalizedCurve.from_values(EDGES, 0.5 + 0.0 * CENTERS, stderr=np.full(100, 1e-4))
    res = intersection_locator(a, b)
    assert res.location == pytest.approx(0.25, abs=1e-12)
    assert not res.multiple


def test_identical_curves_do_not_cross():
    a = NormalizedCurve.from_values(EDGES, 1.0 - CENTERS, stderr=np.full(100, 1e-3))
    assert intersection_locator(a, a).location is None


@given(st.floats(0.05, 0.45), st.floats(0.5, 3.0))
@settings(max_examples=40)
def test_intersection_antisymmetric(x0, slope):
    a = NormalizedCurve.from_values(EDGES, 0.5 - slope * (CENTERS - x0), stderr=np.full(100, 1e-6))
    b = NormalizedCurve.from_values(EDGES, np.full(100, 0.5), stderr=np.full(100, 1e-6))
    ab, ba = intersection_locator(a, b), intersection_locator(b, a)
    assert ab.locations == pytest.approx(ba.locations, abs=1e-12)


def test_multiple_crossings_flagged():
    v = 0.1 * np.sin(2 * np.pi * 6 * CENTERS)
    a = NormalizedCurve.from_values(EDGES, v, stderr=np.full(100, 1e-4))
    b = NormalizedCurve.from_values(EDGES, np.zeros(100), stderr=np.full(100, 1e-4))
    res = intersection_locator(a, b)
    assert res.multiple and len(res.locations) >= 5


def test_intersection_grid_mismatch():
    a = NormalizedCurve.from_values(EDGES, np.ones(100))
    b = NormalizedCurve.from_values(np.linspace(0, 1, 51), np.ones(50))
    with pytest.raises(ValidationError):
        intersection_locator(a, b)


# -- univariance ----------------------------------------------------------------------


@pytest.mark.parametrize("beta", [1, 2])
def test_absolutely_separable_dispersion_is_zero(beta):
    res = univariance_dispersion(0.0, 5, 2000, beta, 3)
    assert res.statistic == 0.0 and all(p == 1.0 for p in res.p_hats)


def test_equal_probability_null_band():
    rng = np.random.default_rng(31)
    n, k = 5000, 20
    stats_ = [dispersion_statistic(rng.binomial(n, 0.3, size=k) / n, n) for _ in range(200)]
    lo, hi = univariance_dispersion(0.0, k, 10, 1, 0).null_band(0.99)
    inside = np.mean([(lo <= s <= hi) for s in stats_])
    assert inside > 0.95


def test_dispersion_degenerate():
    assert dispersion_statistic([0.0, 0.0, 0.0], 100) == 0.0
    assert dispersion_statistic([1.0, 1.0], 100) == 0.0


def test_univariance_reported_at_high_concurrence():
    res = univariance_dispersion(0.7, 20, 10_000, 2, 123)
    assert res.dof == 19 and len(res.spectra) == 20
    assert res.statistic >= 0 and 0 <= res.p_value <= 1
    assert res == univariance_dispersion(0.7, 20, 10_000, 2, 123)


def test_univariance_needs_two_spectra():
    with pytest.raises(ValidationError):
        univariance_dispersion(0.5, 1, 100, 1, 0)


def test_pipeline_on_small_estimated_curve():
    plan = SamplingPlan(seed=1, ensemble=1, spectral_law="iso-concurrence", c_range=(0.5, 1.0), n_spectra=2000)
    nc = normalize_at_half(estimate_curve(plan))
    assert nc.values[50] == 1.0
    fit = fit_power_form(nc)
    assert 0.5 < fit.exponent < 3.0
