import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sepfun.estimator import (
    BinnedCurve,
    SamplingPlan,
    checkpoint_load,
    checkpoint_save,
    chunk_rng,
    curve_to_csv,
    default_edges,
    estimate_curve,
    estimate_orbit_probability,
    iso_concurrence_batch,
    iso_spectrum,
    merge_partials,
    read_curve_csv,
    run_chunk,
    sample_iso_concurrence,
    sample_simplex_uniform,
    simplex_uniform_batch,
    write_curve_csv,
)
from sepfun.qstate import Ensemble, Spectrum, ValidationError, max_concurrence, max_concurrence_batch


def small_plan(**kw):
    base = dict(seed=99, ensemble=2, n_spectra=3000, chunk_size=400, orbits_per_spectrum=2)
    base.update(kw)
    return SamplingPlan(**base)


# -- spectral samplers ---------------------------------------------------------


def test_simplex_sample_contract(rng):
    s = sample_simplex_uniform(rng)
    assert isinstance(s, Spectrum)
    lam = simplex_uniform_batch(rng, 1000)
    assert np.allclose(lam.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diff(lam, axis=1) <= 0)


def test_simplex_order_statistics():
    # E[max of 4 uniform spacings] = H_4 / 4 = 25/48; E[min] = 1/16
    n = 1_000_000
    lam = simplex_uniform_batch(np.random.default_rng(8), n)
    for col, expected in ((0, 25 / 48), (3, 1 / 16)):
        x = lam[:, col]
        assert abs(x.mean() - expected) < 3 * x.std() / math.sqrt(n)


def test_iso_concurrence_pure():
    assert sample_iso_concurrence(1.0, np.random.default_rng(0)).values == (1.0, 0.0, 0.0, 0.0)


def test_iso_concurrence_worked_example():
    # l1 - l3 = 0.5 + 2 sqrt(0.004), l1 + l3 = 0.78
    s = iso_spectrum(0.5, 0.2, 0.02)
    assert np.allclose(s.values, (0.703246, 0.2, 0.076754, 0.02), atol=5e-7)
    assert max_concurrence(s) == pytest.approx(0.5, abs=1e-12)


@given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_iso_concurrence_contract(c, seed):
    lam = iso_concurrence_batch(c, np.random.default_rng(seed), 50)
    for row in lam:
        Spectrum(tuple(row))
    assert np.all(np.abs(max_concurrence_batch(lam) - c) < 1e-12)


@pytest.mark.parametrize("base", ["uniform-simplex", "dirichlet-half"])
@pytest.mark.parametrize("c", [1 - 2**-53, 1 - 2**-52, 1e-300])
def test_iso_concurrence_float_extremes(c, base):
    lam = iso_concurrence_batch(c, np.random.default_rng(0), 200, base=base)
    assert np.all(np.diff(lam, axis=1) <= 0) and np.all(lam[:, 3] >= 0)
    assert np.all(np.abs(max_concurrence_batch(lam) - c) < 1e-12)


def test_iso_concurrence_matches_conditioned_simplex():
    # uniform simplex conditioned on C is uniform in (l2, l4) on the admissible set
    rng = np.random.default_rng(4)
    lam = simplex_uniform_batch(rng, 3_000_000)
    c = max_concurrence_batch(lam)
    cond = lam[np.abs(c - 0.6) < 0.002]
    iso = iso_concurrence_batch(0.6, rng, 200_000)
    for col in (1, 3):
        se = cond[:, col].std() / math.sqrt(len(cond))
        assert abs(cond[:, col].mean() - iso[:, col].mean()) < 5 * se


@given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_iso_dirichlet_half_contract(c, seed):
    lam = iso_concurrence_batch(c, np.random.default_rng(seed), 50, base="dirichlet-half")
    for row in lam:
        Spectrum(tuple(row))
    assert np.all(np.abs(max_concurrence_batch(lam) - c) < 1e-12)


@pytest.mark.parametrize("c0", [0.2, 0.505, 0.9])
def test_iso_dirichlet_half_matches_conditioned_dirichlet(c0):
    rng = np.random.default_rng(40)
    lam = -np.sort(-rng.dirichlet([0.5] * 4, size=6_000_000), axis=1)
    cond = lam[np.abs(max_concurrence_batch(lam) - c0) < 0.002]
    iso = iso_concurrence_batch(c0, rng, 200_000, base="dirichlet-half")
    for col in range(4):
        se = cond[:, col].std() / math.sqrt(len(cond))
        assert abs(cond[:, col].mean() - iso[:, col].mean()) < 5 * se
    assert stats.ks_2samp(cond[:, 3], iso[:, 3]).pvalue > 1e-3


def test_iso_base_rejected():
    with pytest.raises(ValidationError):
        iso_concurrence_batch(0.5, np.random.default_rng(0), 3, base="gaussian")
    with pytest.raises(ValidationError):
        small_plan(iso_base="gaussian")


# -- orbit probabilities -------------------------------------------------------


@pytest.mark.parametrize("ens", list(Ensemble))
def test_orbit_probability_maximally_mixed(ens, rng):
    est = estimate_orbit_probability(Spectrum((0.25,) * 4), ens, 500, rng)
    assert est.p_hat == 1.0 and est.stderr == 0.0


@pytest.mark.parametrize("ens", list(Ensemble))
def test_orbit_probability_pure(ens, rng):
    est = estimate_orbit_probability(Spectrum((1.0, 0.0, 0.0, 0.0)), ens, 10_000, rng)
    assert est.n_separable == 0
    assert est.concurrence == 1.0


@pytest.mark.parametrize("ens", list(Ensemble))
def test_absolutely_separable_region(ens):
    rng = np.random.default_rng(6)
    lam = iso_concurrence_batch(0.0, rng, 5)
    for row in lam:
        est = estimate_orbit_probability(Spectrum(tuple(row)), ens, 10_000, rng)
        assert est.p_hat == 1.0


def test_orbit_probability_requires_samples(rng):
    with pytest.raises(ValidationError):
        estimate_orbit_probability(Spectrum((0.25,) * 4), 1, 0, rng)


def test_binomial_coverage():
    s = iso_spectrum(0.3, 0.2, 0.05)
    rng = np.random.default_rng(12)
    p = estimate_orbit_probability(s, 1, 400_000, rng).p_hat
    reps = np.array([estimate_orbit_probability(s, 1, 1000, rng).p_hat for _ in range(300)])
    ratio = reps.var(ddof=1) / (p * (1 - p) / 1000)
    # chi-square with 299 dof: 99.9% band is roughly [0.76, 1.28]
    assert 0.75 < ratio < 1.3


# -- plans and curves ------------------------------------------------------------


def test_plan_validation():
    with pytest.raises(ValidationError):
        small_plan(n_spectra=0)
    with pytest.raises(ValidationError):
        small_plan(bin_edges=(0.0, 0.6, 0.5, 1.0))
    with pytest.raises(ValidationError):
        small_plan(bin_edges=(0.1, 1.0))
    with pytest.raises(ValidationError):
        small_plan(spectral_law="gaussian")
    with pytest.raises(ValidationError):
        small_plan(ensemble=4)


def test_default_grid_has_edge_at_half():
    e = default_edges()
    assert len(e) == 101 and 0.5 in e


def test_plan_round_trip():
    plan = small_plan(spectral_law="iso-concurrence", c_range=(0.5, 1.0), iso_base="dirichlet-half")
    again = SamplingPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert again == plan and again.fingerprint() == plan.fingerprint()
    assert small_plan(spectral_law="iso-concurrence", c_range=(0.5, 1.0)).fingerprint() != plan.fingerprint()
    assert small_plan(seed=100).fingerprint() != plan.fingerprint()


def test_chunk_streams_independent_of_order():
    a = chunk_rng(5, 3).random(4)
    chunk_rng(5, 1).random(100)
    assert np.array_equal(a, chunk_rng(5, 3).random(4))
    assert not np.array_equal(a, chunk_rng(5, 4).random(4))


def test_curve_invariants():
    curve = estimate_curve(small_plan())
    assert curve.n_total.sum() == 3000 * 2
    s = curve.sigma_hat[~curve.empty_bins]
    assert np.all((s >= 0) & (s <= 1))
    p, n = curve.sigma_hat, curve.n_total
    with np.errstate(invalid="ignore"):
        assert np.allclose(curve.stderr, np.sqrt(p * (1 - p) / n), equal_nan=True)
    assert np.all(np.isnan(curve.sigma_hat[curve.empty_bins]))


def test_stratified_iso_fills_every_bin_in_range():
    plan = small_plan(spectral_law="iso-concurrence", c_range=(0.5, 1.0), n_spectra=500, chunk_size=64)
    curve = estimate_curve(plan)
    upper = curve.c_lo >= 0.5
    assert np.all(curve.n_total[upper] == 20) and np.all(curve.n_total[~upper] == 0)


def test_fixed_iso_concurrence_single_bin():
    curve = estimate_curve(small_plan(spectral_law="iso-concurrence", iso_c=0.505, n_spectra=300))
    assert curve.n_total[curve.bin_index(0.505)] == 600


def test_qmc_plan_deterministic():
    plan = small_plan(qmc=True, n_spectra=1024, chunk_size=256)
    a, b = estimate_curve(plan), estimate_curve(plan, workers=2)
    assert a.same_tallies(b)
    plan = small_plan(qmc=True, spectral_law="dirichlet-half", n_spectra=512, chunk_size=256)
    assert estimate_curve(plan).n_total.sum() == 1024


@pytest.mark.slow
def test_high_concurrence_bins_vanish():
    plan = SamplingPlan(seed=3, ensemble=2, spectral_law="iso-concurrence", c_range=(0.99, 1.0), n_spectra=20_000)
    curve = estimate_curve(plan)
    assert curve.sigma_hat[-1] < 1e-3


# -- merging, determinism, checkpoints ----------------------------------------------


def test_merge_identity_and_commutativity():
    plan = small_plan()
    a, b = run_chunk(plan, 0), run_chunk(plan, 1)
    empty = BinnedCurve.empty(plan)
    assert merge_partials([a, empty]).same_tallies(a)
    ab, ba = merge_partials([a, b]), merge_partials([b, a])
    assert ab.same_tallies(ba) and ab.chunks == ba.chunks


@given(st.permutations(range(8)))
@settings(max_examples=10, deadline=None)
def test_merge_order_irrelevant(order):
    plan = small_plan(n_spectra=800, chunk_size=100)
    parts = [run_chunk(plan, i) for i in order]
    assert merge_partials(parts).same_tallies(estimate_curve(plan))


def test_merge_rejects_mismatch():
    a = run_chunk(small_plan(), 0)
    with pytest.raises(ValidationError):
        merge_partials([a, run_chunk(small_plan(seed=1), 0)])
    with pytest.raises(ValidationError):
        merge_partials([a, a])
    other_grid = small_plan(bin_edges=default_edges(0.05))
    with pytest.raises(ValidationError):
        merge_partials([a, run_chunk(other_grid, 0)])


def test_worker_count_irrelevant():
    plan = small_plan()
    ref = curve_to_csv(estimate_curve(plan, workers=1))
    assert curve_to_csv(estimate_curve(plan, workers=2)) == ref
    assert curve_to_csv(estimate_curve(plan, workers=8)) == ref


def test_checkpoint_round_trip(tmp_path):
    plan = small_plan()
    curve = estimate_curve(plan)
    path = tmp_path / "c.json"
    checkpoint_save(curve, path, plan)
    back = checkpoint_load(path, plan)
    assert back.same_tallies(curve) and back.chunks == curve.chunks and back.fingerprint == curve.fingerprint


def test_resume_matches_uninterrupted(tmp_path):
    plan = small_plan()
    path = tmp_path / "c.json"
    partial = estimate_curve(plan, checkpoint_path=path, checkpoint_every=1, stop_after=3)
    assert len(partial.chunks) == 3
    resumed = estimate_curve(plan, resume=checkpoint_load(path, plan), checkpoint_path=path)
    assert resumed.same_tallies(estimate_curve(plan))
    assert resumed.chunks == frozenset(range(plan.n_chunks))


def test_checkpoint_wrong_plan(tmp_path):
    plan = small_plan()
    path = tmp_path / "c.json"
    checkpoint_save(estimate_curve(plan, stop_after=1), path, plan)
    with pytest.raises(ValidationError):
        checkpoint_load(path, small_plan(seed=5))
    with pytest.raises(ValidationError):
        estimate_curve(small_plan(seed=5), resume=checkpoint_load(path))


def test_csv_round_trip(tmp_path):
    curve = estimate_curve(small_plan())
    path = tmp_path / "curve.csv"
    write_curve_csv(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "beta,c_lo,c_hi,n_total,n_sep,sigma_hat,stderr"
    assert len(lines) == 101
    back = read_curve_csv(path)
    assert back.same_tallies(curve) and back.beta == 2
    row = next(l for l in lines[1:] if l.split(",")[3] != "0").split(",")
    assert float(row[5]) == float(curve.sigma_hat[int(round(float(row[1]) * 100))])
