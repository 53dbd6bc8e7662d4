import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinolab.decoupling import (
    ExpSum, cap_count, critical_p_bound, decoupling_ratio, decoupling_slope, e, eval_exp_sum,
    fit_slope, flat_decoupling_check, lattice_points, lp_moment, lp_moments, make_exp_sum,
    sigma_pd, trilinear_ratio,
)
from vinolab.errors import DomainError, InsufficientSamples
from vinolab.geometry import gamma


def _direct(s, x):
    return np.exp(2j * np.pi * (x @ s.freqs.T)) @ s.coeffs


def _cube_mean_l2(s, R):
    # exact average of |F|^2 over [-R, R]^3: cross terms average to a product of sincs
    d = s.freqs[:, None, :] - s.freqs[None, :, :]
    kern = np.prod(np.sinc(2 * d * R), axis=-1)
    return float(np.real(s.coeffs @ kern @ s.coeffs.conj()))


# ---------------------------------------------------------------- construction

def test_cap_count_and_layout():
    assert cap_count(2.0**8, 0.5) == 16
    assert cap_count(2.0**9, 0.5) == 23
    s = make_exp_sum(2.0**8, 0.5)
    assert np.allclose(s.t, (np.arange(16) + 0.5) / 16)
    assert np.allclose(s.intervals[:, 1] - s.intervals[:, 0], 1 / 16)
    with pytest.raises(DomainError):
        cap_count(0.5, 0.5)
    with pytest.raises(DomainError):
        make_exp_sum(256.0, 0.5, np.ones(3))
    with pytest.raises(DomainError):
        make_exp_sum(256.0, 0.5, "gaussian")


def test_random_coefficients_are_unimodular_and_seeded():
    a = make_exp_sum(1024.0, 0.5, "random", seed=3)
    b = make_exp_sum(1024.0, 0.5, "random", seed=3)
    assert np.allclose(np.abs(a.coeffs), 1.0)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_dict_roundtrip():
    s = make_exp_sum(512.0, 0.5, "random", seed=1)
    t = ExpSum.from_dict(s.to_dict())
    assert np.array_equal(t.coeffs, s.coeffs) and np.array_equal(t.t, s.t) and t.centered


# ---------------------------------------------------------------- evaluation

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(6, 14))
def test_recurrence_matches_direct_sum(seed, k):
    R = 2.0**k
    rng = np.random.default_rng(seed)
    s = make_exp_sum(R, 0.5, "random", rng=rng)
    s = s.with_coeffs(s.coeffs * rng.uniform(0, 2, s.K))
    x = rng.uniform(-R, R, (200, 3))
    got = eval_exp_sum(s, x)
    assert np.allclose(got, _direct(s, x), rtol=0, atol=1e-9 * s.K)


def test_single_term_has_constant_modulus():
    s = make_exp_sum(256.0, 0.5, np.eye(16)[5] * (2 - 1j))
    x = np.random.default_rng(0).uniform(-256, 256, (1000, 3))
    assert np.allclose(np.abs(eval_exp_sum(s, x)), abs(2 - 1j), atol=1e-12)


def test_two_terms_beat():
    s = make_exp_sum(4.0, 0.5)          # K = 2
    x = np.random.default_rng(1).uniform(-4, 4, (500, 3))
    dxi = gamma(s.t[0]) - gamma(s.t[1])
    want = 2 + 2 * np.cos(2 * np.pi * x @ dxi)
    assert np.allclose(np.abs(eval_exp_sum(s, x)) ** 2, want, atol=1e-12)


def test_value_at_origin_is_coefficient_sum():
    s = make_exp_sum(1024.0, 0.5, "random", seed=7)
    assert eval_exp_sum(s, np.zeros(3))[0] == pytest.approx(s.coeffs.sum(), abs=1e-12)


def test_groups_sum_to_whole():
    s = make_exp_sum(1024.0, 0.5, "random", seed=8)
    x = np.random.default_rng(2).uniform(-1024, 1024, (300, 3))
    parts = eval_exp_sum(s, x, [np.arange(0, 10), np.arange(10, s.K)])
    assert np.allclose(parts.sum(axis=0), eval_exp_sum(s, x), atol=1e-9)


def test_non_finite_points_rejected():
    s = make_exp_sum(64.0, 0.5)
    with pytest.raises(DomainError):
        eval_exp_sum(s, [[np.nan, 0, 0]])


def test_e_is_unimodular():
    assert e(0.25) == pytest.approx(1j)


# ---------------------------------------------------------------- moments

def test_lattice_parseval():
    s = make_exp_sum(1024.0, 0.5, "random", seed=4)
    s = s.with_coeffs(s.coeffs * np.linspace(0.5, 2, s.K))
    m = lp_moment(s, 2, sampler="lattice")
    assert m.estimate**2 == pytest.approx(float(np.sum(np.abs(s.coeffs) ** 2)), rel=1e-12)


def test_lattice_fourth_moment_of_two_waves():
    s = make_exp_sum(4.0, 0.5)
    assert lp_moment(s, 4, sampler="lattice").mean_power == pytest.approx(6.0, rel=1e-12)
    assert lattice_points(s, p=4).shape == (2 * 2 * 2 + 1, 3)


def test_lattice_needs_centred_frequencies():
    s = make_exp_sum(256.0, 0.5, jitter=0.5, seed=0)
    with pytest.raises(DomainError):
        lattice_points(s)


@pytest.mark.parametrize("importance", [True, False])
def test_monte_carlo_l2_against_exact_cube_average(importance):
    R = 2.0**8
    s = make_exp_sum(R, 0.5, "random", seed=5)
    m = lp_moment(s, 2, samples=200_000, seed=11, importance=importance)
    exact = _cube_mean_l2(s, R)
    assert abs(m.mean_power - exact) <= 5 * (2 * m.estimate * m.stderr) + 0.02 * exact


def test_importance_and_plain_sampling_agree_at_p10():
    s = make_exp_sum(2.0**8, 0.5, "random", seed=6)
    a = lp_moment(s, 10, samples=400_000, seed=1)
    b = lp_moment(s, 10, samples=400_000, seed=2, importance=False)
    assert abs(a.estimate - b.estimate) <= 5 * np.hypot(a.stderr, b.stderr)


def test_global_phase_does_not_change_estimates():
    s = make_exp_sum(2.0**10, 0.5, "random", seed=9)
    a = lp_moments(s, [4, 10], samples=20_000, seed=3)
    b = lp_moments(s.with_coeffs(s.coeffs * e(0.3)), [4, 10], samples=20_000, seed=3)
    for p in (4.0, 10.0):
        assert a[p].estimate == pytest.approx(b[p].estimate, rel=1e-12)


def test_insufficient_samples_and_bad_p():
    s = make_exp_sum(256.0, 0.5)
    with pytest.raises(InsufficientSamples):
        lp_moment(s, 10, samples=999)
    with pytest.raises(DomainError):
        lp_moment(s, 0.5)
    with pytest.raises(DomainError):
        lp_moment(s, 4, sampler="sobol")


def test_weighted_sampler_runs():
    s = make_exp_sum(2.0**8, 0.5, "random", seed=2)
    m = lp_moment(s, 6, samples=20_000, seed=0, weighted=True)
    assert m.sampler == "weighted" and m.estimate > 0 and np.isfinite(m.stderr)


# ---------------------------------------------------------------- ratios

def test_single_interval_dilation_bookkeeping():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        R = 2.0 ** rng.integers(4, 20)
        p = rng.uniform(2, 20)
        alpha = rng.uniform(0.1, 1.0)
        K = cap_count(R, alpha)
        a = np.zeros(K, complex)
        a[rng.integers(K)] = rng.uniform(0.1, 10) * e(rng.random())
        r = decoupling_ratio(make_exp_sum(R, alpha, a), p)
        assert r.ratio == pytest.approx(R ** (-alpha * (0.5 - 1 / p)), rel=1e-9)
        assert r.stderr == 0.0


def test_zero_coefficients_rejected():
    s = make_exp_sum(256.0, 0.5, np.zeros(16))
    with pytest.raises(DomainError):
        decoupling_ratio(s, 10)


def test_trilinear_single_waves_exact():
    a = np.zeros(6)
    a[[0, 2, 4]] = [1.0, 8.0, 1.0]     # t = 1/12, 5/12, 9/12: one wave per block
    s = make_exp_sum(36.0, 0.5, a)
    r = trilinear_ratio(s, 6)
    den = 36 ** (0.5 * (0.5 - 1 / 6)) * (1 + 8**6 + 1) ** (1 / 6)
    assert r.ratio == pytest.approx(2.0 / den, rel=1e-12)
    assert r.extra["block_ratios"] == pytest.approx([36 ** (-0.5 * (0.5 - 1 / 6))] * 3, rel=1e-12)


def test_trilinear_holder():
    rng = np.random.default_rng(3)
    s = make_exp_sum(2.0**10, 0.5, "random", rng=rng)
    s = s.with_coeffs(s.coeffs * rng.uniform(0.5, 1.5, s.K))
    p = 10.0
    r = trilinear_ratio(s, p, samples=20_000, seed=4)
    idx = [s.block(lo, hi) for lo, hi in ((0, 1 / 6), (1 / 3, 1 / 2), (2 / 3, 1))]
    dens = [s.R ** (s.alpha * (0.5 - 1 / p)) * np.sum(np.abs(s.coeffs[g]) ** p) ** (1 / p) for g in idx]
    block_norms = [b * d for b, d in zip(r.extra["block_ratios"], dens)]
    assert r.moment.estimate <= np.prod(block_norms) ** (1 / 3) * (1 + 1e-12)


def test_trilinear_needs_every_block():
    s = make_exp_sum(4.0, 0.5)                  # t = 1/4, 3/4: middle block empty
    with pytest.raises(DomainError):
        trilinear_ratio(s, 6)


def test_fit_slope():
    x = np.log([2.0, 4, 8, 16])
    assert fit_slope(x, 0.3 * x + 1) == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(DomainError):
        fit_slope([1.0], [1.0])


def test_slope_rows_do_not_depend_on_trial_count():
    one = decoupling_slope([6, 8], [4.0], trials=1, samples=2000, seed=5, first_trial=1).rows
    two = decoupling_slope([6, 8], [4.0], trials=2, samples=2000, seed=5).rows
    assert one == [r for r in two if r["trial"] == 1]


# ---------------------------------------------------------------- flat model

def test_flat_single_block_and_p2_are_exact():
    assert flat_decoupling_check(1, 10.0, trials=3).summary["max_ratio"] == pytest.approx(1.0, rel=1e-12)
    for r in flat_decoupling_check(8, 2.0, trials=3).rows:
        assert r["ratio"] == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DomainError):
        flat_decoupling_check(4, 1.5)
    with pytest.raises(DomainError):
        flat_decoupling_check(0, 4.0)


# ---------------------------------------------------------------- exponents

def test_exponents():
    assert abs(sigma_pd(10, 3) - 0.4) <= 1e-12
    assert sigma_pd(10, 2) == pytest.approx(0.5)
    assert sigma_pd(float("inf"), 4) == pytest.approx(0.25)
    assert critical_p_bound(5) == 26
    assert critical_p_bound(7) == 22
    assert critical_p_bound(4) == float("inf")
    with pytest.raises(DomainError):
        sigma_pd(1.0, 3)
    with pytest.raises(DomainError):
        critical_p_bound(1)
