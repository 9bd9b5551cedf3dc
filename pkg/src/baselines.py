"""
Baselines - Private empirical risk minimization by objective and output perturbation

Both trainers solve a regularized ERM problem with BFGS to a gradient norm of
1e-8; ObjPert perturbs the objective, OutPert adds Gaussian noise to the argmin.
"""
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import ERM_MAX_ITER, ERM_TOLERANCE
from src.errors import ArgumentError, ConfigurationError, OptimizationError
from src.model import Dataset
from src.privacy import PrivacyBudget, PrivacyLedger, gaussian_sigma

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ErmProblem:
    """
    Convex per-example loss with its gradient and declared bounds.

    loss(θ, X, y) returns per-example losses (n,); grad_loss(θ, X, y) returns
    per-example gradients (n, d). L bounds the gradient norm and lambda_H the
    largest eigenvalue of a per-example Hessian.
    """

    loss: LossFn
    grad_loss: LossFn
    L: float
    lambda_H: float
    lambda_reg: float

    def __post_init__(self):
        if not self.L > 0 or not self.lambda_H >= 0:
            raise ConfigurationError("ERM problem needs L > 0 and lambda_H >= 0")
        if self.lambda_reg < 0:
            raise ConfigurationError(f"lambda_reg must be nonnegative, got {self.lambda_reg}")


def _logistic_loss(theta, features, labels):
    return np.logaddexp(0.0, -labels * (features @ theta))


def _logistic_grad(theta, features, labels):
    weights = -labels * expit(-labels * (features @ theta))
    return weights[:, None] * features


def logistic_erm_problem(R: float, lambda_reg: float) -> ErmProblem:
    """Logistic loss for ‖x‖ ≤ R: L = R, lambda_H = R²/4"""
    if not R > 0:
        raise ConfigurationError(f"norm bound must be positive, got {R}")
    return ErmProblem(_logistic_loss, _logistic_grad, L=R, lambda_H=R**2 / 4, lambda_reg=lambda_reg)


def _labels(data: Dataset) -> np.ndarray:
    if data.labels is None:
        raise ArgumentError("ERM needs a labeled dataset")
    return data.labels


def _solve(problem: ErmProblem, data: Dataset, ridge: float, linear: np.ndarray) -> np.ndarray:
    """argmin Σ loss + (ridge/2)‖θ‖² + linearᵀθ"""
    features, labels = data.features, _labels(data)

    def objective(theta):
        value = float(np.sum(problem.loss(theta, features, labels))) + 0.5 * ridge * float(theta @ theta) + float(linear @ theta)
        grad = problem.grad_loss(theta, features, labels).sum(axis=0) + ridge * theta + linear
        return value, grad

    result = minimize(
        objective,
        np.zeros(data.dim),
        jac=True,
        method="BFGS",
        options={"gtol": ERM_TOLERANCE, "maxiter": ERM_MAX_ITER},
    )
    grad_norm = float(np.linalg.norm(result.jac))
    if result.nit >= ERM_MAX_ITER:
        raise OptimizationError("BFGS reached the iteration limit", grad_norm)
    if not result.success:
        # precision loss near the optimum is the usual cause
        logger.debug("BFGS stopped early (%s), gradient norm %.3e", result.message, grad_norm)
    return result.x


def erm_train(problem: ErmProblem, data: Dataset) -> np.ndarray:
    """Non-private regularized ERM solution"""
    return _solve(problem, data, problem.lambda_reg, np.zeros(data.dim))


def objpert_scales(problem: ErmProblem, epsilon: float, delta: float):
    """
    Extra ridge Δ = 2·lambda_H/ε and noise scale β = L·sqrt(8·ln(2/δ) + 4ε)/ε
    """
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    ridge = 2 * problem.lambda_H / epsilon
    beta = problem.L * math.sqrt(8 * math.log(2 / delta) + 4 * epsilon) / epsilon
    return ridge, beta


def objpert_train(problem: ErmProblem, data: Dataset, epsilon: float, delta: float,
                  rng: np.random.Generator, ledger: Optional[PrivacyLedger] = None,
                  inject_noise: bool = True) -> np.ndarray:
    """
    Objective perturbation

    Args:
        problem: convex smooth ERM problem
        data: labeled training data
        epsilon: privacy ε
        delta: privacy δ
        rng: random generator; the noise vector b is drawn before the data is read
        ledger: optional ledger charged (ε, δ)
        inject_noise: False sets b = 0 and Δ = 0

    Returns:
        argmin of Σ loss + (Δ/2)‖θ‖² + bᵀθ + (lambda_reg/2)‖θ‖²
    """
    ridge, beta = objpert_scales(problem, epsilon, delta)
    b = rng.normal(0.0, beta, size=data.dim)
    if not inject_noise:
        ridge, b = 0.0, np.zeros(data.dim)
    theta = _solve(problem, data, problem.lambda_reg + ridge, b)
    if ledger is not None:
        ledger.record("objpert", PrivacyBudget(epsilon, delta))
    return theta


def outpert_sigma(problem: ErmProblem, epsilon: float, delta: float) -> float:
    """Gaussian-mechanism σ for the argmin, whose L2 sensitivity is 2L/lambda_reg"""
    if not problem.lambda_reg > 0:
        raise ConfigurationError("output perturbation needs lambda_reg > 0")
    return gaussian_sigma(2 * problem.L / problem.lambda_reg, epsilon, delta)


def outpert_train(problem: ErmProblem, data: Dataset, epsilon: float, delta: float,
                  rng: np.random.Generator, ledger: Optional[PrivacyLedger] = None) -> np.ndarray:
    """Regularized ERM argmin plus N(0, σ²I) noise"""
    sigma = outpert_sigma(problem, epsilon, delta)
    theta = erm_train(problem, data) + rng.normal(0.0, sigma, size=data.dim)
    if ledger is not None:
        ledger.record("outpert", PrivacyBudget(epsilon, delta))
    return theta
