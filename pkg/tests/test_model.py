"""
Tests for the model contract and built-in models
"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from src.errors import ArgumentError, ConfigurationError, DomainError
from src.model import (
    Dataset,
    check_bounds,
    check_gradient,
    clip_dataset,
    grad_log_posterior,
    grad_log_posterior_minibatch,
    log_posterior_unnorm,
    make_beta_bernoulli_model,
    make_gaussian_mean_model,
    make_linear_regression_model,
    make_logistic_model,
)


BUILT_IN = [
    lambda: make_logistic_model(3, C=2.0, R=1.0),
    lambda: make_gaussian_mean_model(1.0, 1.0, data_bound=3.0, radius=2.0),
    lambda: make_beta_bernoulli_model(2.0, 3.0, 0.1),
    lambda: make_linear_regression_model(2, 1.0, 1.0, data_bound=1.0, label_bound=2.0, radius=1.5),
]


class TestLogisticModel:
    def test_log_lik_at_zero_is_minus_log_two(self, logistic_model):
        x = np.array([[0.3, -0.4], [1.0, 0.0]])
        values = logistic_model.log_lik(np.zeros(2), x, np.array([1.0, -1.0]))
        assert_allclose(values, -math.log(2))

    def test_log_lik_direct_evaluation(self):
        model = make_logistic_model(2, C=2.0)
        value = model.log_lik(np.array([1.0, 0.0]), np.array([[1.0, 0.0]]), np.array([1.0]))[0]
        assert value == pytest.approx(-math.log1p(math.exp(-1)), rel=1e-12)
        assert value == pytest.approx(-0.3133, abs=1e-4)

    def test_declared_bounds(self):
        model = make_logistic_model(4, C=1.0, R=1.0)
        assert model.B == pytest.approx(math.log1p(math.e), rel=1e-12)
        assert model.B == pytest.approx(1.3133, abs=1e-4)
        assert model.L == 1.0

    @pytest.mark.parametrize("d, C", [(0, 1.0), (2, 0.0), (2, -1.0), (1.5, 1.0)])
    def test_invalid_configuration(self, d, C):
        with pytest.raises(ConfigurationError):
            make_logistic_model(d, C)

    def test_needs_labels(self, logistic_model):
        with pytest.raises(ArgumentError):
            logistic_model.log_lik(np.zeros(2), np.zeros((1, 2)))


class TestGaussianMeanModel:
    def test_single_observation_at_zero(self):
        model = make_gaussian_mean_model(1.0, 1.0)
        mean, var = model.posterior(Dataset(np.array([[0.0]])))
        assert mean == 0.0
        assert var == pytest.approx(0.5)

    def test_conjugate_update(self):
        model = make_gaussian_mean_model(1.0, 1.0)
        data = Dataset(np.ones((100, 1)))
        mean, var = model.posterior(data)
        assert mean == pytest.approx(100 / 101)
        assert var == pytest.approx(1 / 101)

    def test_flat_prior_limit(self):
        model = make_gaussian_mean_model(math.inf, 3.0)
        mean, var = model.posterior(Dataset(np.array([[1.0], [3.0], [2.0], [2.0]])))
        assert mean == pytest.approx(2.0)
        assert var == pytest.approx(3.0 / 4)

    def test_tempering_scales_variance(self):
        model = make_gaussian_mean_model(1.0, 1.0)
        data = Dataset(np.ones((10, 1)))
        assert model.posterior(data, rho=0.25)[1] == pytest.approx(4 * model.posterior(data)[1])

    @pytest.mark.parametrize("prior_var, noise_var", [(0.0, 1.0), (1.0, -2.0)])
    def test_rejects_nonpositive_variance(self, prior_var, noise_var):
        with pytest.raises(ConfigurationError):
            make_gaussian_mean_model(prior_var, noise_var)

    def test_unbounded_model_has_infinite_bounds(self, gaussian_model):
        assert math.isinf(gaussian_model.B) and math.isinf(gaussian_model.L)


class TestBetaBernoulliModel:
    def test_bound(self):
        assert make_beta_bernoulli_model(1, 1, 0.1).B == pytest.approx(2.3026, abs=1e-4)

    def test_no_data_gives_uniform_prior(self):
        model = make_beta_bernoulli_model(1, 1, 0.1)
        assert model.tempered_posterior(0, 0, 1.0) == (1.0, 1.0)

    def test_tempered_posterior_shapes(self):
        model = make_beta_bernoulli_model(1, 1, 0.1)
        a, b = model.tempered_posterior(10, 7, 0.5)
        assert (a, b) == pytest.approx((4.5, 2.5))
        assert a / (a + b) == pytest.approx(0.6429, abs=1e-4)

    def test_tempered_log_posterior_matches_beta_kernel(self):
        model = make_beta_bernoulli_model(1, 1, 0.1)
        data = Dataset(np.array([[1.0]] * 7 + [[0.0]] * 3))
        thetas = [0.2, 0.45, 0.8]
        ours = [log_posterior_unnorm(model, data, [t], rho=0.5) for t in thetas]
        kernel = [stats.beta(4.5, 2.5).logpdf(t) for t in thetas]
        diffs = np.array(ours) - np.array(kernel)
        assert_allclose(diffs, diffs[0], atol=1e-10)

    def test_informative_prior_is_tempered_with_the_likelihood(self):
        model = make_beta_bernoulli_model(3, 2, 0.1)
        data = Dataset(np.array([[1.0]] * 7 + [[0.0]] * 3))
        a, b = model.tempered_posterior(10, 7, 0.5)
        assert (a, b) == pytest.approx((0.5 * 9 + 1, 0.5 * 4 + 1))
        thetas = [0.2, 0.45, 0.8]
        ours = [log_posterior_unnorm(model, data, [t], rho=0.5) for t in thetas]
        kernel = [stats.beta(a, b).logpdf(t) for t in thetas]
        diffs = np.array(ours) - np.array(kernel)
        assert_allclose(diffs, diffs[0], atol=1e-10)

    def test_exact_sampler_stays_in_domain(self, rng):
        model = make_beta_bernoulli_model(1, 1, 0.1)
        draws = model.sample_tempered_posterior(np.full(500, 10), np.full(500, 10), 1.0, rng)
        assert draws.min() >= 0.1 and draws.max() <= 0.9

    @pytest.mark.parametrize("a, b, p_min", [(0, 1, 0.1), (1, 1, 0.5), (1, 1, 0.0)])
    def test_invalid_configuration(self, a, b, p_min):
        with pytest.raises(ConfigurationError):
            make_beta_bernoulli_model(a, b, p_min)


class TestLinearRegressionModel:
    def test_no_data_returns_prior(self):
        model = make_linear_regression_model(3, 1.0, 2.0)
        mean, cov = model.posterior(Dataset(np.empty((0, 3)), np.empty(0)))
        assert_allclose(mean, np.zeros(3))
        assert_allclose(cov, 2.0 * np.eye(3))

    def test_one_dimensional_update(self):
        model = make_linear_regression_model(1, 1.0, 1.0)
        mean, cov = model.posterior(Dataset(np.array([[1.0]]), np.array([2.0])))
        assert_allclose(mean, [1.0])
        assert_allclose(cov, [[0.5]])

    def test_random_design_covariance(self, rng):
        X = rng.normal(size=(50, 2))
        y = X @ np.array([0.5, -1.0]) + rng.normal(size=50)
        model = make_linear_regression_model(2, 0.7, 3.0)
        _, cov = model.posterior(Dataset(X, y))
        assert_allclose(cov, np.linalg.inv(X.T @ X / 0.7 + np.eye(2) / 3.0), rtol=1e-10)


class TestPosteriorFunctions:
    def test_linear_in_rho(self, logistic_model, separable_data):
        theta = np.array([0.3, -0.2])
        full = log_posterior_unnorm(logistic_model, separable_data, theta)
        assert log_posterior_unnorm(logistic_model, separable_data, theta, 0.3) == pytest.approx(0.3 * full)

    def test_empty_dataset_gives_tempered_prior(self, logistic_model):
        theta = np.array([0.5, 0.5])
        empty = Dataset(np.empty((0, 2)), np.empty(0))
        assert log_posterior_unnorm(logistic_model, empty, theta, 0.4) == pytest.approx(
            0.4 * logistic_model.log_prior(theta)
        )

    def test_outside_domain(self, logistic_model, separable_data):
        with pytest.raises(DomainError):
            log_posterior_unnorm(logistic_model, separable_data, np.array([3.0, 0.0]))

    def test_full_minibatch_equals_full_gradient(self, logistic_model, separable_data):
        theta = np.array([0.1, 0.4])
        idx = np.arange(separable_data.size)
        assert_allclose(
            grad_log_posterior_minibatch(logistic_model, separable_data, idx, theta),
            grad_log_posterior(logistic_model, separable_data, theta),
        )

    def test_logistic_gradient_at_zero(self):
        model = make_logistic_model(2, C=1.0)
        X = np.array([[0.5, 0.1], [-0.5, -0.1], [0.2, 0.3], [-0.2, -0.3]])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        data = Dataset(X, y)
        idx = [0, 2]
        grad = grad_log_posterior_minibatch(model, data, idx, np.zeros(2))
        expected = (4 / 2) * np.sum(y[idx, None] * X[idx], axis=0) / 2
        assert_allclose(grad, expected)

    def test_minibatch_gradient_matches_finite_differences(self, logistic_model, separable_data):
        theta = np.array([0.2, -0.7])
        idx = np.arange(0, 40, 3)
        sub = separable_data.subset(idx)
        grad = grad_log_posterior_minibatch(logistic_model, separable_data, idx, theta, rho=0.6)
        scale = separable_data.size / idx.size

        def objective(t):
            lik = float(np.sum(logistic_model.log_lik(t, sub.features, sub.labels)))
            return 0.6 * (logistic_model.log_prior(t) + scale * lik)

        fd = np.empty(2)
        for i in range(2):
            h = 1e-6 * (1 + abs(theta[i]))
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (objective(up) - objective(down)) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-5 * (1 + np.linalg.norm(grad))

    def test_empty_minibatch(self, logistic_model, separable_data):
        with pytest.raises(ArgumentError):
            grad_log_posterior_minibatch(logistic_model, separable_data, [], np.zeros(2))


class TestClipDataset:
    def test_examples(self):
        data = Dataset(np.array([[3.0, 4.0], [0.1, 0.2], [0.0, 0.0]]), np.array([1.0, -1.0, 1.0]))
        clipped = clip_dataset(data, 1.0)
        assert_allclose(clipped.features, [[0.6, 0.8], [0.1, 0.2], [0.0, 0.0]])
        assert_allclose(clipped.labels, data.labels)
        assert clipped.norm_bound == 1.0

    def test_idempotent(self, rng):
        data = Dataset(rng.normal(size=(200, 3)) * 2)
        once = clip_dataset(data, 1.5)
        twice = clip_dataset(once, 1.5)
        assert_allclose(twice.features, once.features, rtol=1e-12)

    def test_dataset_rejects_points_beyond_declared_bound(self):
        with pytest.raises(ConfigurationError):
            Dataset(np.array([[2.0, 0.0]]), norm_bound=1.0)


@pytest.mark.parametrize("factory", BUILT_IN)
def test_gradient_matches_finite_differences(factory, rng):
    assert check_gradient(factory(), rng, probes=100) <= 1e-5


@pytest.mark.parametrize("factory", BUILT_IN)
def test_declared_bounds_hold(factory, rng):
    model = factory()
    max_abs, max_grad = check_bounds(model, rng, probes=1000)
    assert max_abs <= model.B * (1 + 1e-12)
    assert max_grad <= model.L * (1 + 1e-12)
