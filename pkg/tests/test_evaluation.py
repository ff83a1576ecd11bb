from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sagevm.denoisers import GaussianOracle, GaussianOracleSpec
from sagevm.errors import CapabilityError, ConfigError, ShapeError
from sagevm.evaluation import (AnalyticPosterior, analytic_posterior, compare_to_analytic, condition_on_support,
                               make_probe, posterior_stats, rmse, ssim, trivial_solution_score,
                               trivial_solution_scores)
from sagevm.grid import GridSpec
from sagevm.linear_gaussian import LinearGaussianProblem
from sagevm.prior import GaussianPrior, build_gaussian_prior


def test_posterior_without_information_is_prior():
    prior = build_gaussian_prior(GridSpec(2, 2), 1.0, 2.0, [1.0, 3.0])
    post = analytic_posterior(prior, np.zeros((4, 4)), 0.5, np.ones(4))
    np.testing.assert_array_equal(post.mean, prior.mean)
    np.testing.assert_array_equal(post.covariance, prior.covariance)
    assert analytic_posterior(prior, None, None, None).covariance.tobytes() == prior.covariance.tobytes()


def test_posterior_scalar_conjugate():
    post = analytic_posterior(GaussianPrior(GridSpec(1, 1), [0.0], [[1.0]]), np.eye(1), 1.0, [2.0])
    assert post.mean[0] == pytest.approx(1.0)
    assert post.covariance[0, 0] == pytest.approx(0.5)


def test_posterior_matches_information_form():
    rng = np.random.default_rng(0)
    prior = build_gaussian_prior(GridSpec(2, 3), 1.2, 1.5, [0.5, 0.0, -0.5])
    m = rng.normal(size=(5, 6))
    y = rng.normal(size=5)
    post = analytic_posterior(prior, m, 0.4, y)
    prec = np.linalg.inv(prior.covariance) + m.T @ m / 0.16
    cov = np.linalg.inv(prec)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-8)
    np.testing.assert_allclose(post.mean, cov @ (np.linalg.solve(prior.covariance, prior.mean) + m.T @ y / 0.16),
                               atol=1e-8)


def test_posterior_noiseless_limit():
    rng = np.random.default_rng(4)
    prior = GaussianPrior(GridSpec(1, 3), np.zeros(3), np.eye(3))
    m = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    y = rng.normal(size=3)
    post = analytic_posterior(prior, m, 1e-6, y)
    np.testing.assert_allclose(post.mean, np.linalg.solve(m, y), atol=1e-3)


def test_posterior_rejects():
    prior = GaussianPrior(GridSpec(1, 1), [0.0], [[1.0]])
    with pytest.raises(ConfigError):
        analytic_posterior(prior, np.eye(1), 0.0, [1.0])
    with pytest.raises(ShapeError):
        analytic_posterior(prior, np.eye(2), 1.0, [1.0, 2.0])


def test_condition_on_support():
    prior = build_gaussian_prior(GridSpec(3, 1), 1.0, 1.0)
    base = AnalyticPosterior(prior.mean, prior.covariance)
    sup = np.array([True, False, False])
    post = condition_on_support(base, sup, [2.0, 0.0, 0.0])
    c = prior.covariance
    assert post.mean[0] == 2.0 and post.mean[1] == pytest.approx(c[1, 0] * 2.0)
    assert post.covariance[1, 1] == pytest.approx(1 - c[1, 0] ** 2)
    assert np.all(post.covariance[0] == 0)
    same = condition_on_support(base, np.zeros(3, bool), np.zeros(3))
    np.testing.assert_array_equal(same.covariance, base.covariance)


def test_posterior_stats_examples():
    a, b = np.array([1.0, 2.0, 5.0]), np.array([3.0, 2.0, -1.0])
    mean, std = posterior_stats([a, b])
    np.testing.assert_allclose(mean, (a + b) / 2)
    np.testing.assert_allclose(std, np.abs(a - b) / np.sqrt(2))
    _, std = posterior_stats(np.tile(a, (4, 1)))
    np.testing.assert_array_equal(std, 0.0)
    with pytest.raises(CapabilityError):
        posterior_stats([a])
    assert posterior_stats([a], with_std=False)[0].tolist() == a.tolist()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 4), elements=st.floats(-1e3, 1e3)), st.randoms(use_true_random=False))
def test_posterior_stats_permutation_invariant(samples, rnd):
    order = list(range(6))
    rnd.shuffle(order)
    m1, s1 = posterior_stats(samples)
    m2, s2 = posterior_stats(samples[order])
    np.testing.assert_allclose(m1, m2, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(s1, s2, rtol=1e-9, atol=1e-9)


def test_ssim_identity_and_constants():
    x = np.random.default_rng(0).normal(size=(10, 12))
    assert ssim(x, x) == 1.0
    c1, c2, L = 2.0, 3.0, 1.5
    k1, k2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    expect = (2 * c1 * c2 + k1) * k2 / ((c1**2 + c2**2 + k1) * k2)
    assert ssim(np.full((8, 8), c1), np.full((8, 8), c2), 7, L) == pytest.approx(expect, rel=1e-12)


def test_ssim_noise_decorrelates():
    rng = np.random.default_rng(1)
    vals = []
    for _ in range(20):
        x = rng.normal(size=(32, 32))
        vals.append(ssim(x + 2.0 * rng.normal(size=x.shape), x))
    assert np.mean(vals) < 0.2


def test_ssim_rejects():
    with pytest.raises(ShapeError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))
    with pytest.raises(ConfigError):
        ssim(np.zeros((9, 9)), np.zeros((9, 9)), window=4)
    with pytest.raises(ShapeError):
        ssim(np.zeros((9, 9)), np.zeros((9, 8)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 9, 11)) * rng.uniform(0.1, 10, size=2)[:, None, None]
    assert ssim(a, b, 7, 3.0) == pytest.approx(ssim(b, a, 7, 3.0), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_rmse():
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))


def _toy_posterior():
    prior = build_gaussian_prior(GridSpec(2, 2), 1.0, 1.0)
    return prior, analytic_posterior(prior, np.eye(4), 0.5, [1.0, -1.0, 0.5, 2.0])


def test_compare_self_consistent():
    _, post = _toy_posterior()
    rep = compare_to_analytic(post.sample(0, 1000), post)
    assert np.all(np.abs(rep["standardized_mean_error"]) < 4)
    assert np.all(np.abs(rep["coverage"] - 0.9) < 0.04)
    assert rep["covariance_rel_frobenius"] < 0.1


def test_compare_degenerate_ensemble():
    _, post = _toy_posterior()
    rep = compare_to_analytic(np.tile(post.mean, (200, 1)), post)
    assert set(np.unique(rep["coverage"])) <= {0.0, 1.0}
    assert rep["covariance_rel_frobenius"] == pytest.approx(1.0)


def test_compare_prior_ensemble_inflated():
    prior, post = _toy_posterior()
    from_prior = compare_to_analytic(AnalyticPosterior(prior.mean, prior.covariance).sample(1, 1000), post)
    from_post = compare_to_analytic(post.sample(1, 1000), post)
    worse = np.abs(from_prior["standardized_mean_error"]) > np.abs(from_post["standardized_mean_error"])
    assert worse.mean() >= 0.8


def _probe_problem():
    from sagevm.imaging import ImagingParams
    prob = LinearGaussianProblem.with_imaging(GridSpec(8, 8), 2.0, 1.0, ImagingParams(2, 1.0, 0.1))
    data = prob.dataset(20, 2, seed=0)
    probe = make_probe(data.x_obs.astype(float), data.lifted(), data.images.astype(float), 50, 0.05, seed=1)
    return prob, probe


def test_trivial_score_conditional_oracle():
    prob, probe = _probe_problem()
    assert trivial_solution_score(prob.oracle("masked"), probe) > 0.1


def test_trivial_score_unconditional_oracle_is_zero():
    prob, probe = _probe_problem()
    den = GaussianOracle(GaussianOracleSpec(prob.prior), "masked")
    assert np.all(trivial_solution_scores(den, probe) == 0.0)


def test_probe_needs_two_records():
    with pytest.raises(CapabilityError):
        make_probe(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 4)), 3, 0.1, 0)
