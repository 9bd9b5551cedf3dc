"""
Privacy - Budgets, the ledger, composition rules and noise calibration

All logarithms are natural. Formulas are the worst-case a-priori ones; the
ledger records planned budgets, never data-dependent audits, and post-hoc
computation on released values is never charged.
"""
import csv
import logging
import math
import threading
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.errors import ArgumentError, PreconditionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrivacyBudget:
    """An (ε, δ) pair"""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ArgumentError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ArgumentError(f"delta must lie in [0, 1), got {self.delta}")

    def __str__(self) -> str:
        return f"(ε={self.epsilon:.6g}, δ={self.delta:.3g})"


class PrivacyLedger:
    """
    Append-only record of privacy-consuming events.

    Writers are serialized by a lock; readers get copies.
    """

    def __init__(self):
        self._events: List[Tuple[str, PrivacyBudget]] = []
        self._lock = threading.Lock()

    def record(self, label: str, budget: PrivacyBudget) -> None:
        with self._lock:
            self._events.append((label, budget))
        logger.info("ledger: %s charged %s", label, budget)

    @property
    def events(self) -> List[Tuple[str, PrivacyBudget]]:
        with self._lock:
            return list(self._events)

    @property
    def total(self) -> PrivacyBudget:
        events = self.events
        if not events:
            return PrivacyBudget(0.0, 0.0)
        return compose_basic([budget for _, budget in events])

    def advanced_total(self, delta_prime: float) -> PrivacyBudget:
        """Advanced-composition total, valid only when every event has the same budget"""
        events = self.events
        if not events:
            return PrivacyBudget(0.0, 0.0)
        first = events[0][1]
        if any(budget != first for _, budget in events):
            raise ArgumentError("advanced composition needs identical events")
        return compose_advanced(first.epsilon, first.delta, len(events), delta_prime)

    def rows(self) -> List[dict]:
        rows = []
        eps_sum, delta_sum = 0.0, 0.0
        for label, budget in self.events:
            eps_sum += budget.epsilon
            delta_sum += budget.delta
            rows.append({
                "event_label": label,
                "epsilon": budget.epsilon,
                "delta": budget.delta,
                "cumulative_epsilon": eps_sum,
                "cumulative_delta": delta_sum,
            })
        return rows

    def to_csv(self, path: str) -> None:
        fields = ["event_label", "epsilon", "delta", "cumulative_epsilon", "cumulative_delta"]
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=fields)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass(frozen=True)
class NoisePlan:
    """
    Per-coordinate Gaussian variance for one DP-SGLD step.

    per_iter_budget is the amplified per-iteration budget that advanced
    composition over `iterations` steps (with δ' = δ/2) turns into the run budget.
    """

    sigma2: float
    per_iter_budget: PrivacyBudget
    iterations: int

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ArgumentError("sigma2 must be nonnegative")
        if self.iterations < 1:
            raise ArgumentError("a plan covers at least one iteration")


def compose_basic(budgets: Sequence[PrivacyBudget]) -> PrivacyBudget:
    """Sequential composition: coordinate-wise sums"""
    budgets = list(budgets)
    if not budgets:
        raise ArgumentError("cannot compose an empty list of budgets")
    return PrivacyBudget(
        math.fsum(b.epsilon for b in budgets),
        math.fsum(b.delta for b in budgets),
    )


def compose_advanced(epsilon: float, delta: float, k: int, delta_prime: float) -> PrivacyBudget:
    """
    k-fold adaptive composition of an (ε, δ) mechanism

    Args:
        epsilon: per-mechanism ε
        delta: per-mechanism δ
        k: number of compositions
        delta_prime: slack δ' > 0

    Returns:
        (sqrt(2k·ln(1/δ'))·ε + k·ε·(e^ε − 1), k·δ + δ')
    """
    if epsilon < 0 or delta < 0 or delta_prime < 0:
        raise ArgumentError("epsilon, delta and delta_prime must be nonnegative")
    if k < 1:
        raise ArgumentError(f"k must be at least 1, got {k}")
    if delta_prime == 0:
        raise ArgumentError("advanced composition is undefined for delta_prime = 0")
    eps_total = math.sqrt(2 * k * math.log(1 / delta_prime)) * epsilon + k * epsilon * math.expm1(epsilon)
    return PrivacyBudget(eps_total, k * delta + delta_prime)


def amplify_subsample(budget: PrivacyBudget, gamma: float) -> PrivacyBudget:
    """Privacy of a mechanism run on a uniform γ-fraction of the data: (2γε, δ)"""
    if not 0 < gamma <= 1:
        raise ArgumentError(f"gamma must lie in (0, 1], got {gamma}")
    if budget.epsilon >= 1:
        raise PreconditionError(
            f"subsampling amplification needs epsilon < 1, got {budget.epsilon}"
        )
    return PrivacyBudget(2 * gamma * budget.epsilon, budget.delta)


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Smallest σ for which N(0, σ²) noise on an L2-sensitivity query is (ε, δ)-DP"""
    if not sensitivity > 0:
        raise ArgumentError(f"sensitivity must be positive, got {sensitivity}")
    if not 0 < epsilon < 1:
        raise PreconditionError(f"the Gaussian mechanism needs epsilon in (0, 1), got {epsilon}")
    if not 0 < delta < 1:
        raise PreconditionError(f"the Gaussian mechanism needs delta in (0, 1), got {delta}")
    return sensitivity * math.sqrt(2 * math.log(1.25 / delta)) / epsilon


def degrade_approx_sampling(epsilon: float, l1_gap: float) -> PrivacyBudget:
    """Budget of an ε-DP sampler run approximately, within L1 distance l1_gap of its target"""
    if not 0 <= l1_gap <= 1:
        raise ArgumentError(f"l1_gap must lie in [0, 1], got {l1_gap}")
    return PrivacyBudget(epsilon, (1 + math.exp(epsilon)) * l1_gap)


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ArgumentError(f"{name} must be positive, got {value}")


def sgld_privacy_coefficient(N: int, T: float, tau: int, L: float, epsilon: float, delta: float) -> float:
    """128·N·T·L²/(τ·ε²) · ln(2.5·N·T/(τ·δ)) · ln(2/δ)"""
    _check_positive(N=N, T=T, tau=tau, L=L, epsilon=epsilon, delta=delta)
    return (
        128.0 * N * T * L**2 / (tau * epsilon**2)
        * math.log(2.5 * N * T / (tau * delta))
        * math.log(2.0 / delta)
    )


def sgld_noise_variance(N: int, T: float, tau: int, L: float, epsilon: float, delta: float, eta_t: float) -> float:
    """Per-coordinate DP-SGLD noise variance: the privacy term, floored at η_t"""
    _check_positive(eta_t=eta_t)
    privacy_term = sgld_privacy_coefficient(N, T, tau, L, epsilon, delta) * eta_t**2
    return max(privacy_term, eta_t)


def iterations_for(N: int, T: float, tau: int) -> int:
    return int(math.floor(N * T / tau))


def plan_sgld_noise(N: int, T: float, tau: int, L: float, epsilon: float, delta: float, eta_t: float) -> NoisePlan:
    iterations = iterations_for(N, T, tau)
    if iterations < 1:
        raise ArgumentError(f"N·T/τ = {N * T / tau:.3g} gives no iterations")
    per_iter = PrivacyBudget(
        epsilon / math.sqrt(8 * iterations * math.log(2 / delta)),
        delta / (2 * iterations),
    )
    return NoisePlan(sgld_noise_variance(N, T, tau, L, epsilon, delta, eta_t), per_iter, iterations)


def check_T_condition(N: int, T: float, tau: int, epsilon: float, delta: float) -> bool:
    """True iff T ≥ ε²·N / (32·τ·ln(2/δ))"""
    _check_positive(N=N, T=T, tau=tau, delta=delta)
    return T >= T_threshold(N, tau, epsilon, delta)


def T_threshold(N: int, tau: int, epsilon: float, delta: float) -> float:
    return epsilon**2 * N / (32 * tau * math.log(2 / delta))


def sgfs_sigma2(N: int, T: float, tau: int, epsilon: float, delta: float) -> float:
    """32·T·ln(2.5NT/(τδ))·ln(2/δ) / (N·τ·ε²)"""
    _check_positive(N=N, T=T, tau=tau, epsilon=epsilon, delta=delta)
    return 32.0 * T * math.log(2.5 * N * T / (tau * delta)) * math.log(2 / delta) / (N * tau * epsilon**2)


def nonspherical_noise_scale(epsilon: float, delta: float) -> float:
    """s = (1 + sqrt(2·ln(1/δ))) / ε"""
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise PreconditionError("the non-spherical Gaussian mechanism needs epsilon, delta in (0, 1)")
    return (1 + math.sqrt(2 * math.log(1 / delta))) / epsilon


def nonspherical_gaussian_noise(F: np.ndarray, epsilon: float, delta: float,
                                rng: np.random.Generator) -> np.ndarray:
    """
    Noise F·w with w ~ N(0, s²·I) for a query whose sensitivity set lies in the ellipsoid F·B^d

    Args:
        F: d×k matrix of full column rank
        epsilon: privacy ε in (0, 1)
        delta: privacy δ in (0, 1)
        rng: random generator

    Returns:
        Noise vector of dimension d
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if np.linalg.matrix_rank(F) < F.shape[1]:
        raise ArgumentError("F must have full column rank")
    scale = nonspherical_noise_scale(epsilon, delta)
    return F @ rng.normal(0.0, scale, size=F.shape[1])


def cov_sensitivity_bound(L: float, n: int) -> float:
    """Frobenius sensitivity 7L²/(n−1) of the unbiased sample covariance for ‖x‖ ≤ L"""
    if n <= 4:
        raise PreconditionError(f"the covariance sensitivity bound needs n > 4, got {n}")
    _check_positive(L=L)
    return 7.0 * L**2 / (n - 1)

