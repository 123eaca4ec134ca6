import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate
from scipy.stats import norm

from pnolab import autodiff as ad
from pnolab.errors import ConfigurationError, EstimatorUndefinedError
from pnolab.scoring import (
    DiscreteMeasure,
    GridFunction,
    PredictiveEnsemble,
    coverage_and_width,
    crps_ensemble,
    empirical_quantile,
    energy_score,
    energy_score_estimator,
    energy_score_population,
    energy_score_tape,
    ensemble_nll,
    gaussian_crps,
    gaussian_nll,
    interval_coverage,
    kernel_score_induced,
    l2_loss_tape,
    l2_metric,
    l2_norm,
    quantile_score,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def ens(values, length=1.0):
    return PredictiveEnsemble(np.asarray(values, dtype=float), length)


# grid functions and norms


def test_grid_function_norm():
    f = GridFunction(np.full(8, 3.0))
    assert f.weight == 0.125
    assert f.norm() == pytest.approx(3.0)


def test_grid_function_validation():
    assert GridFunction(np.ones(1)).weight == 1.0
    with pytest.raises(ConfigurationError):
        GridFunction(np.ones(4), length=0.0)


def test_norm_zero_iff_zero():
    assert l2_norm(np.zeros(5), 0.2) == 0.0
    assert l2_norm(np.array([0, 0, 1e-100, 0.0]), 0.25) > 0.0


# energy score estimator


def test_es_perfect_forecast():
    u = np.random.default_rng(0).standard_normal(16)
    assert energy_score_estimator(ens([u, u]), GridFunction(u)) == 0.0


def test_es_hand_cases():
    assert energy_score(np.array([[0.0], [2.0]]), np.array([1.0]), 1.0) == pytest.approx(0.0)
    assert energy_score(np.array([[1.0], [3.0]]), np.array([0.0]), 1.0) == pytest.approx(1.0)


def test_es_needs_two_members():
    with pytest.raises(EstimatorUndefinedError):
        energy_score(np.zeros((1, 4)), np.zeros(4), 0.25)


def test_es_grid_mismatch():
    with pytest.raises(ConfigurationError):
        energy_score_estimator(ens(np.zeros((3, 8))), GridFunction(np.zeros(16)))
    with pytest.raises(ConfigurationError):
        energy_score_estimator(ens(np.zeros((3, 8)), 2.0), GridFunction(np.zeros(8)))


def test_es_against_explicit_double_sum():
    rng = np.random.default_rng(1)
    m, n = 5, 8
    x = rng.standard_normal((m, n))
    y = rng.standard_normal(n)
    w = 1.0 / n

    def d(a, b):
        return np.sqrt(w * np.sum((a - b) ** 2))

    first = sum(d(x[j], y) for j in range(m)) / m
    second = sum(d(x[j], x[h]) for j in range(m) for h in range(m) if j != h) / (2 * m * (m - 1))
    assert energy_score(x, y, w) == pytest.approx(first - second, rel=1e-13)


def test_es_tape_matches_plain():
    rng = np.random.default_rng(2)
    members = rng.standard_normal((4, 3, 2, 16))
    obs = rng.standard_normal((3, 2, 16))
    tape = ad.Tape()
    node = energy_score_tape(tape.leaf(members), obs, 1.0 / 16)
    plain = np.mean([energy_score(members[:, b], obs[b], 1.0 / 16) for b in range(3)])
    assert float(node.value) == pytest.approx(plain, rel=1e-13)


def test_l2_loss_tape_offset():
    tape = ad.Tape()
    node = l2_loss_tape(tape.leaf(np.full((2, 1, 32), 0.7)), np.zeros((2, 1, 32)), 1.0 / 32)
    assert float(node.value) == pytest.approx(0.7)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 5)), elements=finite),
       arrays(np.float64, 5, elements=finite), st.floats(-100, 100))
def test_es_translation_invariant(members, obs, shift):
    obs = obs[: members.shape[1]]
    w = 1.0 / members.shape[1]
    a = energy_score(members, obs, w)
    b = energy_score(members + shift, obs + shift, w)
    assert a == pytest.approx(b, abs=1e-9 * (1 + abs(shift)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=finite), finite, st.randoms())
def test_es_one_point_equals_fair_crps_and_is_permutation_invariant(samples, y, rnd):
    es = energy_score(samples[:, None], np.array([y]), 1.0)
    assert es == pytest.approx(float(crps_ensemble(samples, y, "fair")), abs=1e-9)
    perm = list(range(len(samples)))
    rnd.shuffle(perm)
    assert energy_score(samples[perm, None], np.array([y]), 1.0) == pytest.approx(es, abs=1e-9)


# population energy score and kernel score


def test_population_es_hand_cases():
    assert energy_score_population(DiscreteMeasure.point_mass([0.3, -1.0]), [0.3, -1.0]) == 0.0
    assert energy_score_population(DiscreteMeasure.point_mass([0.0]), [1.0]) == 1.0
    assert energy_score_population(DiscreteMeasure.uniform([[0.0], [2.0]]), [1.0]) == pytest.approx(0.5)


def test_kernel_score_hand_cases():
    p = DiscreteMeasure.uniform([[0.0], [2.0]])
    assert kernel_score_induced(p, [1.0], [0.0]) == pytest.approx(0.5)
    y = np.array([1.0, 2.0, -3.0])
    assert kernel_score_induced(DiscreteMeasure.point_mass(y), y, [4.0, 0.0, 1.0]) == pytest.approx(0.0, abs=1e-15)


def test_kernel_identity_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k = rng.integers(1, 6)
        p = DiscreteMeasure(rng.standard_normal((k, 3)), rng.dirichlet(np.ones(k)))
        x = rng.standard_normal(3)
        es = energy_score_population(p, x)
        for z0 in rng.standard_normal((3, 3)):
            assert abs(kernel_score_induced(p, x, z0) - es) < 1e-12


def test_discrete_measure_validation():
    with pytest.raises(ConfigurationError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]))
    with pytest.raises(ConfigurationError):
        DiscreteMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]))
    with pytest.raises(ConfigurationError):
        DiscreteMeasure(np.array([[np.inf], [0.0]]), np.array([0.5, 0.5]))


def test_same_measure_detects_merged_atoms():
    a = DiscreteMeasure(np.array([[0.0], [0.0], [1.0]]), np.array([0.25, 0.25, 0.5]))
    b = DiscreteMeasure(np.array([[1.0], [0.0]]), np.array([0.5, 0.5]))
    assert a.same_as(b)
    assert not a.same_as(DiscreteMeasure.uniform([[0.0], [2.0]]))


# CRPS and quantiles


def test_crps_hand_cases():
    assert float(crps_ensemble(np.array([0.0, 2.0]), 1.0, "fair")) == pytest.approx(0.0)
    assert float(crps_ensemble(np.array([0.7]), 0.7, "nrg")) == 0.0


def test_crps_minimum_sizes():
    with pytest.raises(EstimatorUndefinedError):
        crps_ensemble(np.array([1.0]), 0.0, "fair")
    with pytest.raises(ConfigurationError):
        crps_ensemble(np.array([1.0, 2.0]), 0.0, "rps")


def test_crps_matches_pairwise_definition():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(7)
    y = 0.3
    pair = np.abs(x[:, None] - x[None, :]).sum()
    first = np.abs(x - y).mean()
    assert float(crps_ensemble(x, y, "fair")) == pytest.approx(first - pair / (2 * 7 * 6), rel=1e-13)
    assert float(crps_ensemble(x, y, "nrg")) == pytest.approx(first - pair / (2 * 49), rel=1e-13)


def test_crps_broadcasts_over_grid():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 3, 4))
    y = rng.standard_normal((3, 4))
    out = crps_ensemble(x, y)
    assert out.shape == (3, 4)
    assert out[2, 1] == pytest.approx(float(crps_ensemble(x[:, 2, 1], y[2, 1])))


def test_quantile_score_examples():
    assert quantile_score(1.3, 1.3, 0.2) == 0.0
    assert quantile_score(0.0, 1.0, 0.5) == pytest.approx(1.0)
    assert quantile_score(2.0, 1.0, 0.9) == pytest.approx(0.2)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigurationError):
            quantile_score(0.0, 1.0, bad)


def test_empirical_quantile_examples():
    x = np.arange(1.0, 101.0)
    assert empirical_quantile(x, 0.025) == pytest.approx(3.475)
    assert empirical_quantile(x, 0.975) == pytest.approx(97.525)
    rng = np.random.default_rng(6).standard_normal(13)
    assert empirical_quantile(rng, 0.0) == rng.min()
    assert empirical_quantile(rng, 1.0) == rng.max()
    with pytest.raises(ConfigurationError):
        empirical_quantile(np.array([]), 0.5)


def test_empirical_quantile_linear_formula():
    x = np.random.default_rng(7).standard_normal(11)
    s = np.sort(x)
    for p in (0.1, 0.33, 0.9):
        h = p * (len(x) - 1) + 1
        lo, hi = int(np.floor(h)), int(np.ceil(h))
        expected = s[lo - 1] + (h - lo) * (s[hi - 1] - s[lo - 1])
        assert empirical_quantile(x, p) == pytest.approx(expected, rel=1e-14)


def _quantile_integral(samples, y, n_points=10_000):
    alphas = (np.arange(n_points) + 0.5) / n_points
    q = empirical_quantile(samples, alphas, "inverted_cdf")
    return float(np.mean(quantile_score(q, y, alphas)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4, 5, 8, 10, 16, 20, 25]), st.integers(0, 2**32 - 1))
def test_crps_nrg_equals_quantile_integral(m, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(m)
    y = float(rng.standard_normal())
    assert float(crps_ensemble(x, y, "nrg")) == pytest.approx(_quantile_integral(x, y), abs=1e-4)


def test_linear_quantile_breaks_the_integral_identity():
    # the interpolating quantile is not the inverse of the empirical CDF
    x = np.array([0.0, 1.0])
    alphas = (np.arange(10_000) + 0.5) / 10_000
    q = empirical_quantile(x, alphas)
    integral = float(np.mean(quantile_score(q, 0.5, alphas)))
    assert abs(integral - float(crps_ensemble(x, 0.5, "nrg"))) > 1e-2


def test_gaussian_crps_matches_integral_definition():
    # CRPS = int (F(z) - 1{z >= y})^2 dz
    mu, sigma, y = 0.4, 1.7, -0.9
    lower, _ = integrate.quad(lambda z: norm.cdf(z, mu, sigma) ** 2, -np.inf, y)
    upper, _ = integrate.quad(lambda z: (1 - norm.cdf(z, mu, sigma)) ** 2, y, np.inf)
    assert gaussian_crps(mu, sigma, y) == pytest.approx(lower + upper, rel=1e-9)


def test_gaussian_crps_reference_values():
    assert gaussian_crps(0.0, 1.0, 0.0) == pytest.approx(0.2336949772551091, abs=1e-15)
    # expected CRPS when y follows the forecast: sigma / sqrt(pi)
    expected, _ = integrate.quad(lambda y: gaussian_crps(0.0, 0.1, y) * norm.pdf(y, 0, 0.1), -2, 2)
    assert expected == pytest.approx(0.05641895835477563, rel=1e-9)


# coverage, width, L2, NLL


def test_coverage_examples():
    members = np.arange(1.0, 101.0)[:, None]
    cov, width = interval_coverage(members, np.array([50.0]))
    assert cov == 1.0
    assert width == pytest.approx(94.05)
    cov, _ = interval_coverage(members, np.array([100.0]))
    assert cov == 0.0
    u = np.random.default_rng(8).standard_normal(16)
    assert coverage_and_width(ens([u, u, u]), GridFunction(u)) == (1.0, 0.0)


def test_coverage_closed_interval():
    cov, _ = interval_coverage(np.array([[0.0], [1.0]]), np.array([1.0]), alpha=0.0)
    assert cov == 1.0


def test_l2_metric_examples():
    assert l2_metric(ens([[1.0, 2.0], [1.0, 2.0]]), GridFunction(np.array([1.0, 2.0]))) == 0.0
    assert l2_metric(ens([[2.0], [4.0]]), GridFunction(np.ones(1))) == pytest.approx(2.0)
    c = -0.37
    u = np.random.default_rng(9).standard_normal(64)
    assert l2_metric(ens([u + c, u + c]), GridFunction(u)) == pytest.approx(abs(c))


def test_nll_examples():
    half_log_2pi = 0.9189385332046727
    assert gaussian_nll(np.zeros(1), np.ones(1), np.zeros(1))[0] == pytest.approx(half_log_2pi)
    assert gaussian_nll(np.zeros(1), np.ones(1), np.full(1, 2.0))[0] == pytest.approx(half_log_2pi + 2)
    y = np.random.default_rng(10).standard_normal(33)
    assert gaussian_nll(y, np.ones(33), y)[0] == pytest.approx(half_log_2pi)


def test_nll_floor_flags():
    nll, floored = gaussian_nll(np.zeros(3), np.array([1.0, 0.0, 1e-13]), np.zeros(3))
    assert floored == 2
    assert np.isfinite(nll)


def test_ensemble_nll_uses_unbiased_variance():
    members = np.array([[0.0], [2.0]])
    nll, _ = ensemble_nll(members, np.array([1.0]))
    assert nll == pytest.approx(0.5 * np.log(2 * np.pi * 2.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
def test_all_metrics_translation_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    members = rng.standard_normal((10, 8))
    obs = rng.standard_normal(8)
    base = (crps_ensemble(members, obs), interval_coverage(members, obs), ensemble_nll(members, obs)[0])
    moved = (crps_ensemble(members + shift, obs + shift), interval_coverage(members + shift, obs + shift),
             ensemble_nll(members + shift, obs + shift)[0])
    tol = 1e-9 * (1 + abs(shift))
    assert np.allclose(base[0], moved[0], atol=tol)
    assert base[1][0] == moved[1][0]
    assert base[1][1] == pytest.approx(moved[1][1], abs=tol)
    assert base[2] == pytest.approx(moved[2], abs=1e-6 * (1 + abs(shift)))


def test_quantile_levels_as_array():
    x = np.array([3.0, 1.0, 2.0])
    assert np.array_equal(empirical_quantile(x, np.array([0.0, 0.5, 1.0])), [1.0, 2.0, 3.0])
    with pytest.raises(ConfigurationError):
        empirical_quantile(x, np.array([0.5, 1.5]))
