"""
Model - Probabilistic model contract and the built-in models

Every sampler and oracle consumes a ModelSpec: per-point log-likelihood and its
parameter gradient, a prior, declared bounds B (|log-likelihood|) and L
(gradient norm), and an optional ball-shaped parameter domain.

Samplers work on the negative log-posterior; models expose log-densities and
gradients in the ascent direction.
"""
import math
import os
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import FD_STEP_FACTOR
from src.errors import ArgumentError, ConfigurationError, DomainError

DOMAIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ParamDomain:
    """Euclidean ball {θ : ‖θ − center‖₂ ≤ radius}"""

    center: np.ndarray
    radius: float

    def contains(self, theta: np.ndarray) -> bool:
        return float(np.linalg.norm(theta - self.center)) <= self.radius * (1 + DOMAIN_TOL) + DOMAIN_TOL

    def project(self, theta: np.ndarray) -> np.ndarray:
        offset = theta - self.center
        norm = float(np.linalg.norm(offset))
        if norm <= self.radius:
            return theta
        return self.center + offset * (self.radius / norm)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Ordered feature vectors with optional labels and a declared norm bound R.

    Arrays are copied and frozen on construction, so a Dataset can be shared
    between concurrent chains.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    norm_bound: float = math.inf

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise ConfigurationError("features must be a 2-d array")
        labels = None
        if self.labels is not None:
            labels = np.array(self.labels, dtype=float).reshape(-1)
            if labels.shape[0] != features.shape[0]:
                raise ConfigurationError(
                    f"{labels.shape[0]} labels for {features.shape[0]} feature rows"
                )
            labels.setflags(write=False)
        if not self.norm_bound > 0:
            raise ConfigurationError("norm_bound must be positive")
        if math.isfinite(self.norm_bound) and features.shape[0] > 0:
            max_norm = float(np.max(np.linalg.norm(features, axis=1)))
            if max_norm > self.norm_bound * (1 + 1e-9):
                raise ConfigurationError(
                    f"point norm {max_norm:.6g} exceeds declared bound {self.norm_bound:.6g}"
                )
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.size

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.norm_bound)

    def replace_point(self, index: int, features: np.ndarray, label: Optional[float] = None) -> "Dataset":
        """Return the neighbouring dataset with point `index` swapped out"""
        new_features = np.array(self.features)
        new_features[index] = features
        new_labels = None
        if self.labels is not None:
            new_labels = np.array(self.labels)
            new_labels[index] = label
        return Dataset(new_features, new_labels, self.norm_bound)


class ModelSpec(ABC):
    """
    Contract every model implements.

    Attributes:
        dim: parameter dimension d
        B: declared bound on |log p(x|θ)| over the declared domains
        L: declared bound on ‖∇_θ log p(x|θ)‖₂
        domain: ball the parameter is projected onto, or None
    """

    name = "model"

    def __init__(self, dim: int, B: float, L: float, domain: Optional[ParamDomain] = None):
        if dim < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.B = float(B)
        self.L = float(L)
        self.domain = domain

    @abstractmethod
    def log_lik(self, theta: np.ndarray, features: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-point log p(x|θ), shape (n,)"""

    @abstractmethod
    def grad_log_lik(self, theta: np.ndarray, features: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-point ∇_θ log p(x|θ), shape (n, d)"""

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad_log_prior(self, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def probe(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, Optional[float]]:
        """Draw a random (θ, x, y) inside the declared domains for bound checks"""

    def contains(self, theta: np.ndarray) -> bool:
        if not np.all(np.isfinite(theta)):
            return False
        return self.domain is None or self.domain.contains(theta)

    def project(self, theta: np.ndarray) -> np.ndarray:
        return theta if self.domain is None else self.domain.project(theta)

    def initial_theta(self) -> np.ndarray:
        """A data-independent starting point"""
        if self.domain is not None:
            return np.array(self.domain.center, dtype=float)
        return np.zeros(self.dim)

    def _as_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim:
            raise ArgumentError(f"expected θ of dimension {self.dim}, got {theta.shape[0]}")
        return theta


class LogisticModel(ModelSpec):
    """Logistic regression with a Gaussian prior truncated to the ball ‖θ‖₂ ≤ C"""

    name = "logistic"

    def __init__(self, dim: int, C: float, R: float = 1.0):
        if not C > 0:
            raise ConfigurationError(f"radius C must be positive, got {C}")
        if not R > 0:
            raise ConfigurationError(f"norm bound R must be positive, got {R}")
        self.C = float(C)
        self.R = float(R)
        B = float(np.logaddexp(0.0, self.C * self.R))
        super().__init__(dim, B=B, L=self.R, domain=ParamDomain(np.zeros(dim), self.C))

    def log_lik(self, theta, features, labels=None):
        if labels is None:
            raise ArgumentError("logistic model needs labels")
        margins = labels * (features @ theta)
        return -np.logaddexp(0.0, -margins)

    def grad_log_lik(self, theta, features, labels=None):
        if labels is None:
            raise ArgumentError("logistic model needs labels")
        margins = labels * (features @ theta)
        weights = labels * special.expit(-margins)
        return features * weights[:, None]

    def log_prior(self, theta):
        return float(-0.5 * np.dot(theta, theta) / self.C**2)

    def grad_log_prior(self, theta):
        return -theta / self.C**2

    def probe(self, rng):
        theta = _uniform_ball(rng, self.dim, self.C)
        x = _uniform_ball(rng, self.dim, self.R)
        y = float(rng.choice([-1.0, 1.0]))
        return theta, x, y


class GaussianMeanModel(ModelSpec):
    """
    x ~ N(θ, noise_var), θ ~ N(0, prior_var); prior_var = inf gives the flat prior.

    With data_bound R and radius C the model declares finite B and L and
    restricts θ to [−C, C], which private samplers require.
    """

    name = "gaussian-mean"

    def __init__(self, prior_var: float, noise_var: float,
                 data_bound: Optional[float] = None, radius: Optional[float] = None):
        if not prior_var > 0 or not noise_var > 0:
            raise ConfigurationError("prior_var and noise_var must be positive")
        self.prior_var = float(prior_var)
        self.noise_var = float(noise_var)
        self.data_bound = data_bound
        self.radius = radius
        domain = None
        B = L = math.inf
        if radius is not None:
            if not radius > 0:
                raise ConfigurationError("radius must be positive")
            domain = ParamDomain(np.zeros(1), float(radius))
            if data_bound is not None:
                reach = float(data_bound) + float(radius)
                B = abs(0.5 * math.log(2 * math.pi * self.noise_var)) + reach**2 / (2 * self.noise_var)
                L = reach / self.noise_var
        super().__init__(1, B=B, L=L, domain=domain)

    @property
    def flat_prior(self) -> bool:
        return math.isinf(self.prior_var)

    def log_lik(self, theta, features, labels=None):
        resid = features[:, 0] - theta[0]
        return -0.5 * math.log(2 * math.pi * self.noise_var) - resid**2 / (2 * self.noise_var)

    def grad_log_lik(self, theta, features, labels=None):
        return (features - theta[0]) / self.noise_var

    def log_prior(self, theta):
        if self.flat_prior:
            return 0.0
        return float(-0.5 * theta[0] ** 2 / self.prior_var)

    def grad_log_prior(self, theta):
        if self.flat_prior:
            return np.zeros(1)
        return -theta / self.prior_var

    def posterior(self, data: Dataset, rho: float = 1.0) -> Tuple[float, float]:
        """
        Closed-form (tempered) posterior of the untruncated model

        Args:
            data: observations, one feature column
            rho: tempering exponent; scales the precision, leaves the mean unchanged

        Returns:
            (mean, variance)
        """
        n = data.size
        total = float(np.sum(data.features[:, 0]))
        if self.flat_prior:
            if n == 0:
                raise ArgumentError("flat prior has no posterior without data")
            return total / n, self.noise_var / (n * rho)
        mean = total / (n + self.noise_var / self.prior_var)
        var = 1.0 / (n / self.noise_var + 1.0 / self.prior_var)
        return mean, var / rho

    def fisher_information(self, theta=None) -> float:
        return 1.0 / self.noise_var

    def probe(self, rng):
        if self.radius is not None:
            theta = rng.uniform(-self.radius, self.radius, size=1)
        else:
            theta = rng.normal(size=1)
        bound = self.data_bound if self.data_bound is not None else 3.0
        x = rng.uniform(-bound, bound, size=1)
        return theta, x, None


class BetaBernoulliModel(ModelSpec):
    """Bernoulli observations with a Beta(a, b) prior truncated to [p_min, 1 − p_min]"""

    name = "beta-bernoulli"

    def __init__(self, a: float, b: float, p_min: float):
        if not a > 0 or not b > 0:
            raise ConfigurationError("Beta parameters must be positive")
        if not 0 < p_min < 0.5:
            raise ConfigurationError(f"p_min must lie in (0, 0.5), got {p_min}")
        self.a = float(a)
        self.b = float(b)
        self.p_min = float(p_min)
        domain = ParamDomain(np.array([0.5]), 0.5 - self.p_min)
        super().__init__(1, B=-math.log(self.p_min), L=1.0 / self.p_min, domain=domain)

    @property
    def lower(self) -> float:
        return self.p_min

    @property
    def upper(self) -> float:
        return 1.0 - self.p_min

    def log_lik(self, theta, features, labels=None):
        x = features[:, 0]
        return x * math.log(theta[0]) + (1 - x) * math.log1p(-theta[0])

    def grad_log_lik(self, theta, features, labels=None):
        x = features[:, :1]
        return x / theta[0] - (1 - x) / (1 - theta[0])

    def log_prior(self, theta):
        return float((self.a - 1) * math.log(theta[0]) + (self.b - 1) * math.log1p(-theta[0]))

    def grad_log_prior(self, theta):
        return np.array([(self.a - 1) / theta[0] - (self.b - 1) / (1 - theta[0])])

    def tempered_posterior(self, n: int, s: int, rho: float) -> Tuple[float, float]:
        """
        Shape parameters of the tempered posterior before truncation.

        Both likelihood and prior are raised to ρ, so the density is
        θ^{ρ(s+a−1)}(1−θ)^{ρ(n−s+b−1)} on [p_min, 1 − p_min].
        """
        return rho * (s + self.a - 1) + 1, rho * (n - s + self.b - 1) + 1

    def sample_tempered_posterior(self, n, s, rho: float, rng: np.random.Generator) -> np.ndarray:
        """
        Exact draws from the truncated tempered posterior by inverse-CDF sampling

        Args:
            n: number of observations (scalar or array)
            s: number of ones (same shape as n)
            rho: tempering exponent
            rng: random generator

        Returns:
            Array of draws, one per (n, s) pair
        """
        alpha, beta = self.tempered_posterior(np.asarray(n), np.asarray(s), rho)
        dist = stats.beta(alpha, beta)
        lo, hi = dist.cdf(self.lower), dist.cdf(self.upper)
        u = rng.uniform(size=np.shape(alpha))
        draws = dist.ppf(lo + u * (hi - lo))
        return np.clip(draws, self.lower, self.upper)

    def fisher_information(self, theta: float) -> float:
        return 1.0 / (theta * (1 - theta))

    def probe(self, rng):
        theta = rng.uniform(self.lower, self.upper, size=1)
        x = np.array([float(rng.integers(0, 2))])
        return theta, x, None


class LinearRegressionModel(ModelSpec):
    """
    y | x, θ ~ N(θᵀx, noise_var), θ ~ N(0, prior_var·I).

    Supplying data_bound, label_bound and radius makes B and L finite.
    """

    name = "linear-regression"

    def __init__(self, dim: int, noise_var: float, prior_var: float,
                 data_bound: Optional[float] = None, label_bound: Optional[float] = None,
                 radius: Optional[float] = None):
        if not noise_var > 0 or not prior_var > 0:
            raise ConfigurationError("noise_var and prior_var must be positive")
        self.noise_var = float(noise_var)
        self.prior_var = float(prior_var)
        domain = None
        B = L = math.inf
        if radius is not None:
            if not radius > 0:
                raise ConfigurationError("radius must be positive")
            domain = ParamDomain(np.zeros(dim), float(radius))
            if data_bound is not None and label_bound is not None:
                reach = label_bound + radius * data_bound
                B = abs(0.5 * math.log(2 * math.pi * self.noise_var)) + reach**2 / (2 * self.noise_var)
                L = data_bound * reach / self.noise_var
        self.data_bound = data_bound
        self.label_bound = label_bound
        super().__init__(dim, B=B, L=L, domain=domain)

    def log_lik(self, theta, features, labels=None):
        if labels is None:
            raise ArgumentError("linear regression needs labels")
        resid = labels - features @ theta
        return -0.5 * math.log(2 * math.pi * self.noise_var) - resid**2 / (2 * self.noise_var)

    def grad_log_lik(self, theta, features, labels=None):
        if labels is None:
            raise ArgumentError("linear regression needs labels")
        resid = labels - features @ theta
        return features * (resid / self.noise_var)[:, None]

    def log_prior(self, theta):
        return float(-0.5 * np.dot(theta, theta) / self.prior_var)

    def grad_log_prior(self, theta):
        return -theta / self.prior_var

    def posterior(self, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        """Closed-form Gaussian posterior (mean, covariance)"""
        precision = np.eye(self.dim) / self.prior_var
        shift = np.zeros(self.dim)
        if data.size > 0:
            X = data.features
            precision = precision + X.T @ X / self.noise_var
            shift = X.T @ data.labels / self.noise_var
        cov = np.linalg.inv(precision)
        return cov @ shift, cov

    def probe(self, rng):
        theta = _uniform_ball(rng, self.dim, self.domain.radius if self.domain else 1.0)
        x = _uniform_ball(rng, self.dim, self.data_bound or 1.0)
        y = float(rng.uniform(-(self.label_bound or 1.0), self.label_bound or 1.0))
        return theta, x, y


def _uniform_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.uniform() ** (1.0 / dim)


def make_logistic_model(d: int, C: float, R: float = 1.0) -> LogisticModel:
    """Logistic regression on the ball ‖θ‖ ≤ C for data with ‖x‖ ≤ R"""
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ConfigurationError(f"dimension must be a positive integer, got {d}")
    return LogisticModel(int(d), C, R)


def make_gaussian_mean_model(prior_var: float, noise_var: float,
                             data_bound: Optional[float] = None,
                             radius: Optional[float] = None) -> GaussianMeanModel:
    return GaussianMeanModel(prior_var, noise_var, data_bound=data_bound, radius=radius)


def make_beta_bernoulli_model(a: float, b: float, p_min: float) -> BetaBernoulliModel:
    return BetaBernoulliModel(a, b, p_min)


def make_linear_regression_model(d: int, noise_var: float, prior_var: float, **bounds) -> LinearRegressionModel:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ConfigurationError(f"dimension must be a positive integer, got {d}")
    return LinearRegressionModel(int(d), noise_var, prior_var, **bounds)


def log_posterior_unnorm(model: ModelSpec, data: Dataset, theta, rho: float = 1.0) -> float:
    """
    Tempered unnormalized log posterior ρ·Σ log p(xᵢ|θ) + ρ·log π(θ)

    Args:
        model: model contract
        data: dataset (may be empty)
        theta: parameter inside the model's domain
        rho: tempering exponent

    Returns:
        The log density up to an additive constant
    """
    theta = model._as_theta(theta)
    if not model.contains(theta):
        raise DomainError(f"θ={theta} lies outside the parameter domain")
    if rho < 0:
        raise ArgumentError(f"rho must be nonnegative, got {rho}")
    total = model.log_prior(theta)
    if data.size > 0:
        total += float(np.sum(model.log_lik(theta, data.features, data.labels)))
    return rho * total


def grad_log_posterior_minibatch(model: ModelSpec, data: Dataset, indices, theta, rho: float = 1.0) -> np.ndarray:
    """
    Minibatch estimate ρ·[∇log π(θ) + (N/|S|)·Σ_{i∈S} ∇log p(xᵢ|θ)] (ascent direction)

    Args:
        model: model contract
        data: full dataset of size N
        indices: minibatch S
        theta: current parameter
        rho: tempering exponent

    Returns:
        Gradient vector of dimension d
    """
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ArgumentError("minibatch is empty")
    if idx.min() < 0 or idx.max() >= data.size:
        raise ArgumentError(f"minibatch indices must lie in [0, {data.size})")
    theta = model._as_theta(theta)
    labels = None if data.labels is None else data.labels[idx]
    grads = model.grad_log_lik(theta, data.features[idx], labels)
    scale = data.size / idx.size
    return rho * (model.grad_log_prior(theta) + scale * grads.sum(axis=0))


def grad_log_posterior(model: ModelSpec, data: Dataset, theta, rho: float = 1.0) -> np.ndarray:
    """Full-data gradient of the tempered log posterior"""
    theta = model._as_theta(theta)
    if data.size == 0:
        return rho * model.grad_log_prior(theta)
    return grad_log_posterior_minibatch(model, data, np.arange(data.size), theta, rho)


def clip_dataset(data: Dataset, R: float) -> Dataset:
    """Scale every feature vector with norm above R down onto the R-sphere"""
    if not R > 0:
        raise ConfigurationError(f"clip radius must be positive, got {R}")
    features = np.array(data.features)
    if features.shape[0] > 0:
        norms = np.linalg.norm(features, axis=1)
        factors = np.where(norms > R, R / np.where(norms > 0, norms, 1.0), 1.0)
        features = features * factors[:, None]
    return Dataset(features, data.labels, float(R))


def check_gradient(model: ModelSpec, rng: np.random.Generator, probes: int = 100) -> float:
    """
    Compare grad_log_lik with central finite differences of log_lik at random probes

    Returns:
        Largest ‖grad − fd‖ / (1 + ‖grad‖) observed
    """
    worst = 0.0
    for _ in range(probes):
        theta, x, y = model.probe(rng)
        features = x.reshape(1, -1)
        labels = None if y is None else np.array([y])
        grad = model.grad_log_lik(theta, features, labels)[0]
        fd = np.empty(model.dim)
        for i in range(model.dim):
            h = FD_STEP_FACTOR * (1 + abs(theta[i]))
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (model.log_lik(up, features, labels)[0] - model.log_lik(down, features, labels)[0]) / (2 * h)
        worst = max(worst, float(np.linalg.norm(grad - fd)) / (1 + float(np.linalg.norm(grad))))
    return worst


def check_bounds(model: ModelSpec, rng: np.random.Generator, probes: int = 1000) -> Tuple[float, float]:
    """
    Largest |log_lik| and ‖grad_log_lik‖ seen at random probes inside the declared domains
    """
    max_abs, max_grad = 0.0, 0.0
    for _ in range(probes):
        theta, x, y = model.probe(rng)
        features = x.reshape(1, -1)
        labels = None if y is None else np.array([y])
        max_abs = max(max_abs, abs(float(model.log_lik(theta, features, labels)[0])))
        max_grad = max(max_grad, float(np.linalg.norm(model.grad_log_lik(theta, features, labels)[0])))
    return max_abs, max_grad
