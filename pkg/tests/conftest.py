"""
Shared fixtures
"""
import numpy as np
import pytest

from src.model import (
    Dataset,
    make_beta_bernoulli_model,
    make_gaussian_mean_model,
    make_logistic_model,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def gaussian_model():
    return make_gaussian_mean_model(prior_var=1.0, noise_var=1.0)


@pytest.fixture
def bounded_gaussian_model():
    return make_gaussian_mean_model(prior_var=1.0, noise_var=1.0, data_bound=3.0, radius=2.0)


@pytest.fixture
def gaussian_data():
    draws = np.random.default_rng(7).normal(1.0, 1.0, size=100)
    return Dataset(np.clip(draws, -3.0, 3.0).reshape(-1, 1))


@pytest.fixture
def bernoulli_model():
    return make_beta_bernoulli_model(1.0, 1.0, 0.1)


@pytest.fixture
def bernoulli_data():
    return Dataset(np.array([[1.0], [1.0], [0.0], [1.0], [0.0], [1.0], [1.0], [0.0], [1.0], [1.0]]))


@pytest.fixture
def logistic_model():
    return make_logistic_model(2, C=2.0, R=1.0)


@pytest.fixture
def separable_data():
    rng = np.random.default_rng(3)
    labels = np.where(rng.uniform(size=200) < 0.5, -1.0, 1.0)
    features = rng.normal(size=(200, 2)) * 0.2 + 0.6 * labels[:, None]
    norms = np.maximum(np.linalg.norm(features, axis=1, keepdims=True), 1.0)
    return Dataset(features / norms, labels, 1.0)
