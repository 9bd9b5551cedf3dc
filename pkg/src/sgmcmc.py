"""
SG-MCMC - Stochastic-gradient samplers and their differentially private variants

SGLD, SGHMC (momentum form), SGNHT (thermostat form) and SGFS, each with a
private run gated by its privacy condition, plus the hybrid sampler that
starts a private SGLD chain from a one-posterior sample.

Gradients come from the model in the ascent direction on the log posterior;
the updates below descend the negative log posterior U = −log p(θ|X).
"""
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import DEFAULT_BURN_IN_FRACTION, DIVERGENCE_THRESHOLD, SGFS_RIDGE
from src.errors import ArgumentError, ConfigurationError, PreconditionError, PrivacyGateError, SamplerError
from src.model import Dataset, ModelSpec, grad_log_posterior_minibatch
from src.privacy import (
    PrivacyBudget,
    PrivacyLedger,
    T_threshold,
    check_T_condition,
    iterations_for,
    sgfs_sigma2,
    sgld_noise_variance,
    sgld_privacy_coefficient,
)

logger = logging.getLogger(__name__)

BURNIN = "burnin"
SAMPLING = "sampling"


@dataclass(frozen=True)
class StepSchedule:
    """
    Stepsize η_t for t = 1, 2, ...

    decay:        a·(b + t)^(−γ), γ ∈ (0.5, 1]
    constant:     η₀
    decay_floor:  max(a·(b + t)^(−γ), η₀)
    inverse_t:    scale / t
    """

    kind: str
    a: float = 1.0
    b: float = 0.0
    gamma: float = 1.0
    eta0: float = 0.0
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("decay", "constant", "decay_floor", "inverse_t"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind in ("decay", "decay_floor"):
            if not 0.5 < self.gamma <= 1:
                raise ConfigurationError(f"decay exponent must lie in (0.5, 1], got {self.gamma}")
            if not self.a > 0 or self.b < 0:
                raise ConfigurationError("decay schedule needs a > 0 and b >= 0")
        if self.kind in ("constant", "decay_floor") and not self.eta0 > 0:
            raise ConfigurationError(f"eta0 must be positive, got {self.eta0}")
        if self.kind == "inverse_t" and not self.scale > 0:
            raise ConfigurationError("inverse_t schedule needs a positive scale")

    @classmethod
    def decay(cls, a: float, b: float, gamma: float) -> "StepSchedule":
        return cls("decay", a=a, b=b, gamma=gamma)

    @classmethod
    def constant(cls, eta0: float) -> "StepSchedule":
        return cls("constant", eta0=eta0)

    @classmethod
    def decay_floor(cls, a: float, b: float, gamma: float, eta0: float) -> "StepSchedule":
        return cls("decay_floor", a=a, b=b, gamma=gamma, eta0=eta0)

    @classmethod
    def inverse_t(cls, scale: float) -> "StepSchedule":
        return cls("inverse_t", scale=scale)

    def __call__(self, t: int) -> float:
        if t < 1:
            raise ArgumentError(f"iterations start at t = 1, got {t}")
        if self.kind == "constant":
            return self.eta0
        if self.kind == "inverse_t":
            return self.scale / t
        eta = self.a * (self.b + t) ** (-self.gamma)
        if self.kind == "decay_floor":
            eta = max(eta, self.eta0)
        return eta


@dataclass(frozen=True)
class SamplerConfig:
    """Minibatch size τ, data passes T, stepsize schedule, burn-in fraction α and seed"""

    tau: int
    passes: float
    schedule: StepSchedule
    burn_in_fraction: float = DEFAULT_BURN_IN_FRACTION
    seed: int = 0
    collect_every: int = 1
    rho: float = 1.0

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigurationError(f"minibatch size must be >= 1, got {self.tau}")
        if self.passes < 0:
            raise ConfigurationError(f"number of passes must be >= 0, got {self.passes}")
        if not 0 <= self.burn_in_fraction < 1:
            raise ConfigurationError("burn_in_fraction must lie in [0, 1)")
        if self.collect_every < 1:
            raise ConfigurationError("collect_every must be >= 1")
        if not self.rho > 0:
            raise ConfigurationError("rho must be positive")

    def iterations(self, N: int) -> int:
        return iterations_for(N, self.passes, self.tau)

    def check_data(self, data: Dataset) -> None:
        if data.size < 1:
            raise ArgumentError("stochastic-gradient samplers need a nonempty dataset")
        if self.tau > data.size:
            raise ConfigurationError(f"minibatch size {self.tau} exceeds dataset size {data.size}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class PrivateSamplerConfig:
    """
    A SamplerConfig plus the (ε, δ) target.

    noise_multiplier scales the injected variance; it exists so audits can be
    shown to catch under-noised runs and is 1.0 in every real run.
    """

    base: SamplerConfig
    epsilon: float
    delta: float
    noise_multiplier: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class HmcState:
    theta: np.ndarray
    v: np.ndarray
    alpha: float = 0.0


@dataclass
class SampleTrace:
    """Released iterates with their stepsize, injected noise variance and phase"""

    dim: int
    t: List[int] = field(default_factory=list)
    thetas: List[np.ndarray] = field(default_factory=list)
    eta: List[float] = field(default_factory=list)
    noise_var: List[float] = field(default_factory=list)
    phase: List[str] = field(default_factory=list)
    ledger_event: Optional[PrivacyBudget] = None

    def append(self, t: int, theta: np.ndarray, eta: float, noise_var: float, phase: str) -> None:
        if self.t and t <= self.t[-1]:
            raise ArgumentError(f"trace iterations must increase, got {t} after {self.t[-1]}")
        self.t.append(int(t))
        self.thetas.append(np.array(theta, dtype=float))
        self.eta.append(float(eta))
        self.noise_var.append(float(noise_var))
        self.phase.append(phase)

    def __len__(self) -> int:
        return len(self.t)

    def theta_array(self) -> np.ndarray:
        if not self.thetas:
            return np.empty((0, self.dim))
        return np.vstack(self.thetas)

    def samples(self) -> np.ndarray:
        """Iterates of the sampling phase"""
        keep = [i for i, p in enumerate(self.phase) if p == SAMPLING]
        return self.theta_array()[keep]

    @property
    def last(self) -> np.ndarray:
        return self.thetas[-1]

    def noise_audit(self, expected: Callable[[int, float], float], rel_tol: float = 1e-12) -> List[int]:
        """
        Compare recorded noise variances with a planner

        Args:
            expected: maps (t, η_t) to the variance the planner prescribes
            rel_tol: allowed relative mismatch

        Returns:
            Iterations whose recorded variance disagrees with the planner
        """
        bad = []
        for t, eta, var in zip(self.t, self.eta, self.noise_var):
            want = expected(t, eta)
            if abs(var - want) > rel_tol * abs(want):
                bad.append(t)
        return bad

    def to_csv(self, path: str) -> None:
        header = ["t", "phase", "eta", "noise_var"] + [f"theta_{i}" for i in range(self.dim)]
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for t, phase, eta, var, theta in zip(self.t, self.phase, self.eta, self.noise_var, self.thetas):
                writer.writerow([t, phase, repr(eta), repr(var)] + [repr(float(x)) for x in theta])


def _draw_minibatch(rng: np.random.Generator, N: int, tau: int) -> np.ndarray:
    if tau >= N:
        return np.arange(N)
    return rng.choice(N, size=tau, replace=False)


def _minibatch_gradient(model: ModelSpec, data: Dataset, theta: np.ndarray, t: int,
                        cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    idx = _draw_minibatch(rng, data.size, cfg.tau)
    grad = grad_log_posterior_minibatch(model, data, idx, theta, cfg.rho)
    if not np.all(np.isfinite(grad)):
        raise SamplerError(f"non-finite gradient at iteration {t}", state={"t": t, "theta": theta.copy()})
    return grad


def _guard(t: int, theta: np.ndarray, v: Optional[np.ndarray] = None, alpha: float = 0.0) -> None:
    too_big = float(np.linalg.norm(theta)) > DIVERGENCE_THRESHOLD
    if v is not None:
        too_big = too_big or float(np.linalg.norm(v)) > DIVERGENCE_THRESHOLD
    finite = np.all(np.isfinite(theta)) and (v is None or np.all(np.isfinite(v)))
    if too_big or not finite:
        raise SamplerError(
            f"sampler diverged at iteration {t}",
            state={"t": t, "theta": theta.copy(), "v": None if v is None else v.copy(), "alpha": alpha},
        )


def _phase(t: int, iterations: int, cfg: SamplerConfig) -> str:
    return BURNIN if t <= cfg.burn_in_fraction * iterations else SAMPLING


# ---------------------------------------------------------------------------
# SGLD
# ---------------------------------------------------------------------------

def sgld_step(model: ModelSpec, data: Dataset, theta: np.ndarray, t: int, cfg: SamplerConfig,
              rng: np.random.Generator, noise_var: Optional[float] = None) -> np.ndarray:
    """
    One SGLD iterate θ_{t+1} = θ_t − (η_t/2)·∇̂U(θ_t) + z_t, z_t ~ N(0, noise_var·I)

    Args:
        model: model contract
        data: dataset of size N
        theta: current iterate
        t: iteration number (1-based)
        cfg: sampler settings
        rng: random generator
        noise_var: per-coordinate variance of z_t; defaults to η_t

    Returns:
        Next iterate, projected onto the parameter domain
    """
    eta = cfg.schedule(t)
    grad = _minibatch_gradient(model, data, theta, t, cfg, rng)
    var = eta if noise_var is None else noise_var
    new_theta = theta + 0.5 * eta * grad + rng.normal(0.0, math.sqrt(var), size=theta.shape[0])
    _guard(t, new_theta)
    return model.project(new_theta)


def sgld_run(model: ModelSpec, data: Dataset, cfg: SamplerConfig, theta0,
             rng: Optional[np.random.Generator] = None) -> SampleTrace:
    """Non-private SGLD chain over floor(N·T/τ) iterations"""
    cfg.check_data(data)
    rng = rng or cfg.rng()
    theta = model.project(np.asarray(theta0, dtype=float).copy())
    iterations = cfg.iterations(data.size)
    trace = SampleTrace(model.dim)
    logger.info("SGLD: %d iterations, tau=%d", iterations, cfg.tau)
    for t in range(1, iterations + 1):
        theta = sgld_step(model, data, theta, t, cfg, rng)
        if t % cfg.collect_every == 0:
            eta = cfg.schedule(t)
            trace.append(t, theta, eta, eta, _phase(t, iterations, cfg))
    return trace


def _require_gradient_bound(model: ModelSpec) -> None:
    if not math.isfinite(model.L):
        raise ConfigurationError(f"{model.name} model declares no finite gradient bound L")


def _gate_T(N: int, cfg: PrivateSamplerConfig) -> None:
    base = cfg.base
    if not check_T_condition(N, base.passes, base.tau, cfg.epsilon, cfg.delta):
        threshold = T_threshold(N, base.tau, cfg.epsilon, cfg.delta)
        raise PrivacyGateError(
            f"T-condition violated: T={base.passes} < ε²N/(32τ·ln(2/δ)) = {threshold:.4g}"
        )


def dp_sgld_run(model: ModelSpec, data: Dataset, cfg: PrivateSamplerConfig, theta1,
                rng: Optional[np.random.Generator] = None, ledger: Optional[PrivacyLedger] = None,
                label: str = "dp-sgld") -> SampleTrace:
    """
    Differentially private SGLD; every iterate is released

    Args:
        model: model with a finite gradient bound L
        data: dataset of size N
        cfg: private sampler settings
        theta1: starting point, chosen independently of the data
        rng: random generator (defaults to one seeded from cfg.base.seed)
        ledger: optional ledger charged (ε, δ) once for the whole run
        label: ledger event label

    Returns:
        SampleTrace with per-iterate noise variances
    """
    base = cfg.base
    base.check_data(data)
    _require_gradient_bound(model)
    N = data.size
    _gate_T(N, cfg)
    rng = rng or base.rng()
    theta = model.project(np.asarray(theta1, dtype=float).copy())
    iterations = base.iterations(N)
    trace = SampleTrace(model.dim)
    logger.info("DP-SGLD: %d iterations at (ε=%g, δ=%g)", iterations, cfg.epsilon, cfg.delta)
    for t in range(1, iterations + 1):
        eta = base.schedule(t)
        var = sgld_noise_variance(N, base.passes, base.tau, model.L, cfg.epsilon, cfg.delta, eta)
        var *= cfg.noise_multiplier
        theta = sgld_step(model, data, theta, t, base, rng, noise_var=var)
        if t % base.collect_every == 0:
            trace.append(t, theta, eta, var, _phase(t, iterations, base))
    trace.ledger_event = PrivacyBudget(cfg.epsilon, cfg.delta)
    if ledger is not None:
        ledger.record(label, trace.ledger_event)
    return trace


def alpha_phase_schedule(alpha: float, N: int, T: float, tau: int, L: float,
                         epsilon: float, delta: float) -> StepSchedule:
    """
    η_t = α·ε² / (128·L²·ln(2.5NT/(τδ))·ln(2/δ)·t)

    The privacy term of the DP-SGLD noise equals η_t at t = αNT/τ and falls
    below it afterwards, so the chain runs exact SGLD from then on.
    """
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    scale = alpha * epsilon**2 / (
        128.0 * L**2 * math.log(2.5 * N * T / (tau * delta)) * math.log(2 / delta)
    )
    return StepSchedule.inverse_t(scale)


def crossover_iteration(alpha: float, N: int, T: float, tau: int) -> float:
    return alpha * N * T / tau


# ---------------------------------------------------------------------------
# SGHMC and SGNHT (momentum reformulations)
# ---------------------------------------------------------------------------

def sghmc_step(model: ModelSpec, data: Dataset, state: HmcState, t: int, cfg: SamplerConfig,
               a: float, b_hat: float, rng: np.random.Generator,
               noise_var: Optional[float] = None) -> HmcState:
    """
    θ_t = θ_{t−1} + v_{t−1}
    v_t = v_{t−1} − η_t·∇̂U − a·v_{t−1} + N(0, 2(a − b̂)·η_t·I)
    """
    if b_hat < 0 or not a > b_hat:
        raise ConfigurationError(f"SGHMC needs a > b_hat >= 0, got a={a}, b_hat={b_hat}")
    eta = cfg.schedule(t)
    grad = _minibatch_gradient(model, data, state.theta, t, cfg, rng)
    var = 2 * (a - b_hat) * eta if noise_var is None else noise_var
    theta = model.project(state.theta + state.v)
    v = state.v + eta * grad - a * state.v + rng.normal(0.0, math.sqrt(var), size=state.v.shape[0])
    _guard(t, theta, v)
    return HmcState(theta, v, state.alpha)


def sgnht_step(model: ModelSpec, data: Dataset, state: HmcState, t: int, cfg: SamplerConfig,
               a: float, rng: np.random.Generator, noise_var: Optional[float] = None) -> HmcState:
    """
    v_t = v_{t−1} − α_{t−1}·v_{t−1} − η_t·∇̂U + N(0, 2a·η_t·I)
    θ_t = θ_{t−1} + v_{t−1}
    α_t = α_{t−1} + (v_tᵀv_t / d − η_t)
    """
    if not a > 0:
        raise ConfigurationError(f"SGNHT needs a > 0, got {a}")
    eta = cfg.schedule(t)
    grad = _minibatch_gradient(model, data, state.theta, t, cfg, rng)
    var = 2 * a * eta if noise_var is None else noise_var
    v = state.v - state.alpha * state.v + eta * grad + rng.normal(0.0, math.sqrt(var), size=state.v.shape[0])
    theta = model.project(state.theta + state.v)
    alpha = state.alpha + (float(v @ v) / v.shape[0] - eta)
    _guard(t, theta, v, alpha)
    return HmcState(theta, v, alpha)


def _momentum_run(step: Callable[..., HmcState], model: ModelSpec, data: Dataset, cfg: SamplerConfig,
                  state: HmcState, rng: np.random.Generator,
                  noise: Optional[Callable[[float], float]] = None) -> SampleTrace:
    iterations = cfg.iterations(data.size)
    trace = SampleTrace(model.dim)
    for t in range(1, iterations + 1):
        eta = cfg.schedule(t)
        var = noise(eta) if noise is not None else None
        state = step(state, t, var)
        if t % cfg.collect_every == 0:
            trace.append(t, state.theta, eta, var if var is not None else float("nan"), _phase(t, iterations, cfg))
    return trace


def _initial_state(model: ModelSpec, theta0, v0=None, alpha0: float = 0.0) -> HmcState:
    theta = model.project(np.asarray(theta0, dtype=float).copy())
    v = np.zeros(model.dim) if v0 is None else np.asarray(v0, dtype=float).copy()
    if v.shape != theta.shape:
        raise ArgumentError("momentum and parameter dimensions differ")
    return HmcState(theta, v, float(alpha0))


def sghmc_run(model: ModelSpec, data: Dataset, cfg: SamplerConfig, theta0, a: float, b_hat: float = 0.0,
              rng: Optional[np.random.Generator] = None, v0=None) -> SampleTrace:
    """Non-private SGHMC chain; recorded noise_var is 2(a − b̂)·η_t"""
    cfg.check_data(data)
    rng = rng or cfg.rng()
    state = _initial_state(model, theta0, v0)
    return _momentum_run(
        lambda s, t, var: sghmc_step(model, data, s, t, cfg, a, b_hat, rng, var),
        model, data, cfg, state, rng, noise=lambda eta: 2 * (a - b_hat) * eta,
    )


def sgnht_run(model: ModelSpec, data: Dataset, cfg: SamplerConfig, theta0, a: float,
              rng: Optional[np.random.Generator] = None, v0=None,
              alpha0: Optional[float] = None) -> SampleTrace:
    """Non-private SGNHT chain; the thermostat starts at α₀ = a unless given"""
    cfg.check_data(data)
    rng = rng or cfg.rng()
    state = _initial_state(model, theta0, v0, a if alpha0 is None else alpha0)
    return _momentum_run(
        lambda s, t, var: sgnht_step(model, data, s, t, cfg, a, rng, var),
        model, data, cfg, state, rng, noise=lambda eta: 2 * a * eta,
    )


def dp_sghmc_check(a: float, b_hat: float, eta_t: float, N: int, T: float, tau: int,
                   L: float, epsilon: float, delta: float) -> bool:
    """True iff 2(a − b̂)/η_t ≥ 128NTL²/(τε²)·ln(2.5NT/(τδ))·ln(2/δ)"""
    if not eta_t > 0:
        raise ArgumentError(f"eta_t must be positive, got {eta_t}")
    return 2 * (a - b_hat) / eta_t >= sgld_privacy_coefficient(N, T, tau, L, epsilon, delta)


def dp_sgnht_check(a: float, eta_t: float, N: int, T: float, tau: int,
                   L: float, epsilon: float, delta: float) -> bool:
    """True iff 2a/η_t ≥ the DP-SGLD privacy coefficient"""
    return dp_sghmc_check(a, 0.0, eta_t, N, T, tau, L, epsilon, delta)


def _gate_friction(check: Callable[[float], bool], iterations: int, schedule: StepSchedule, name: str) -> None:
    for t in range(1, iterations + 1):
        if not check(schedule(t)):
            raise PrivacyGateError(f"{name} friction condition fails at iteration {t} (η_t={schedule(t):.3g})")


def dp_sghmc_run(model: ModelSpec, data: Dataset, cfg: PrivateSamplerConfig, theta1, a: float,
                 b_hat: float = 0.0, rng: Optional[np.random.Generator] = None,
                 ledger: Optional[PrivacyLedger] = None) -> SampleTrace:
    """Private SGHMC: refuses to start unless the friction condition holds at every η_t"""
    base = cfg.base
    base.check_data(data)
    _require_gradient_bound(model)
    N = data.size
    _gate_T(N, cfg)
    iterations = base.iterations(N)
    _gate_friction(
        lambda eta: dp_sghmc_check(a, b_hat, eta, N, base.passes, base.tau, model.L, cfg.epsilon, cfg.delta),
        iterations, base.schedule, "SGHMC",
    )
    rng = rng or base.rng()
    state = _initial_state(model, theta1)
    trace = _momentum_run(
        lambda s, t, var: sghmc_step(model, data, s, t, base, a, b_hat, rng, var),
        model, data, base, state, rng,
        noise=lambda eta: 2 * (a - b_hat) * eta * cfg.noise_multiplier,
    )
    trace.ledger_event = PrivacyBudget(cfg.epsilon, cfg.delta)
    if ledger is not None:
        ledger.record("dp-sghmc", trace.ledger_event)
    return trace


def dp_sgnht_run(model: ModelSpec, data: Dataset, cfg: PrivateSamplerConfig, theta1, a: float,
                 rng: Optional[np.random.Generator] = None,
                 ledger: Optional[PrivacyLedger] = None) -> SampleTrace:
    """Private SGNHT: refuses to start unless 2a/η_t clears the privacy coefficient at every t"""
    base = cfg.base
    base.check_data(data)
    _require_gradient_bound(model)
    N = data.size
    _gate_T(N, cfg)
    iterations = base.iterations(N)
    _gate_friction(
        lambda eta: dp_sgnht_check(a, eta, N, base.passes, base.tau, model.L, cfg.epsilon, cfg.delta),
        iterations, base.schedule, "SGNHT",
    )
    rng = rng or base.rng()
    state = _initial_state(model, theta1, alpha0=a)
    trace = _momentum_run(
        lambda s, t, var: sgnht_step(model, data, s, t, base, a, rng, var),
        model, data, base, state, rng,
        noise=lambda eta: 2 * a * eta * cfg.noise_multiplier,
    )
    trace.ledger_event = PrivacyBudget(cfg.epsilon, cfg.delta)
    if ledger is not None:
        ledger.record("dp-sgnht", trace.ledger_event)
    return trace


# ---------------------------------------------------------------------------
# SGFS
# ---------------------------------------------------------------------------

def psd_project(matrix: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm: clip negative eigenvalues at 0"""
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(sym)
    return (vectors * np.clip(values, 0.0, None)) @ vectors.T


def private_covariance(grads: np.ndarray, F_norm: float, sigma2: float,
                       rng: np.random.Generator) -> np.ndarray:
    """
    Unbiased sample covariance of per-example gradients plus a symmetric Gaussian
    perturbation W (Wᵢⱼ = Wⱼᵢ ~ N(0, 49‖F‖⁴σ²)), projected onto the PSD cone

    Args:
        grads: n×d per-example gradients, n ≥ 2
        F_norm: spectral norm of the Lipschitz matrix F
        sigma2: base variance σ²; 0 disables the perturbation
        rng: random generator

    Returns:
        d×d symmetric PSD matrix
    """
    grads = np.atleast_2d(np.asarray(grads, dtype=float))
    if grads.shape[0] < 2:
        raise ArgumentError("sample covariance needs at least 2 gradients")
    cov = np.atleast_2d(np.cov(grads, rowvar=False, ddof=1))
    if sigma2 > 0:
        d = cov.shape[0]
        draws = rng.normal(0.0, 7.0 * F_norm**2 * math.sqrt(sigma2), size=(d, d))
        upper = np.triu(draws)
        cov = cov + upper + np.triu(upper, 1).T
    return psd_project(cov)


def _solve_preconditioned(matrix: np.ndarray, rhs: np.ndarray, t: int) -> np.ndarray:
    try:
        if np.linalg.cond(matrix) < 1e12:
            return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError:
        pass
    logger.warning("SGFS preconditioner is singular at iteration %d; adding %g·I", t, SGFS_RIDGE)
    return np.linalg.solve(matrix + SGFS_RIDGE * np.eye(matrix.shape[0]), rhs)


def _sgfs_iterate(model: ModelSpec, data: Dataset, base: SamplerConfig, sigma2: Optional[float],
                  F: Optional[np.ndarray], kappa_schedule: Optional[Callable[[int], float]],
                  rng: Optional[np.random.Generator], theta1, fisher: Optional[np.ndarray]) -> SampleTrace:
    # sigma2 None runs plain SGFS: Z = 0 and W = 0
    N, tau, d = data.size, base.tau, model.dim
    if F is None:
        _require_gradient_bound(model)
        F = model.L * np.eye(d)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    kappa_schedule = kappa_schedule or (lambda t: 1.0 / t)
    rng = rng or base.rng()
    theta = model.project(np.asarray(model.initial_theta() if theta1 is None else theta1, dtype=float).copy())
    F_norm = float(np.linalg.norm(F, 2))
    FFt = F @ F.T
    gamma_N = (tau + N) * N / tau
    iterations = base.iterations(N)
    fisher_hat = None
    trace = SampleTrace(d)
    for t in range(1, iterations + 1):
        eta = base.schedule(t)
        idx = _draw_minibatch(rng, N, tau)
        labels = None if data.labels is None else data.labels[idx]
        grads = base.rho * model.grad_log_lik(theta, data.features[idx], labels)
        g_bar = grads.mean(axis=0)
        if sigma2 is None:
            z_var, g_tilde = 0.0, g_bar
        else:
            z_var = max(sigma2, 1.0 / (N**2 * eta))
            g_tilde = g_bar + F @ rng.normal(0.0, math.sqrt(z_var), size=d)
        if fisher is not None:
            V = np.atleast_2d(fisher)
        else:
            V = private_covariance(grads, F_norm, 0.0 if sigma2 is None else sigma2, rng)
        kappa = kappa_schedule(t)
        fisher_hat = V if fisher_hat is None else (1 - kappa) * fisher_hat + kappa * V
        precond = gamma_N * fisher_hat + 4.0 * FFt / eta
        rhs = base.rho * model.grad_log_prior(theta) + N * g_tilde
        theta = theta + 2.0 * _solve_preconditioned(precond, rhs, t)
        _guard(t, theta)
        theta = model.project(theta)
        if t % base.collect_every == 0:
            trace.append(t, theta, eta, z_var, _phase(t, iterations, base))
    return trace


def sgfs_run(model: ModelSpec, data: Dataset, cfg: SamplerConfig, F: Optional[np.ndarray] = None,
             kappa_schedule: Optional[Callable[[int], float]] = None,
             rng: Optional[np.random.Generator] = None, theta1=None,
             fisher: Optional[np.ndarray] = None) -> SampleTrace:
    """Non-private stochastic gradient Fisher scoring; no privacy gate, nothing charged"""
    cfg.check_data(data)
    if cfg.tau < 2:
        raise ConfigurationError("SGFS needs minibatches of at least 2 points")
    logger.info("SGFS: %d iterations, tau=%d", cfg.iterations(data.size), cfg.tau)
    return _sgfs_iterate(model, data, cfg, None, F, kappa_schedule, rng, theta1, fisher)


def dp_sgfs_run(model: ModelSpec, data: Dataset, cfg: PrivateSamplerConfig, F: Optional[np.ndarray] = None,
                kappa_schedule: Optional[Callable[[int], float]] = None,
                rng: Optional[np.random.Generator] = None, theta1=None,
                ledger: Optional[PrivacyLedger] = None,
                fisher: Optional[np.ndarray] = None) -> SampleTrace:
    """
    Differentially private stochastic gradient Fisher scoring

    Args:
        model: model contract; F defaults to L·I
        data: dataset of size N
        cfg: private sampler settings
        F: public Lipschitz matrix (d×d)
        kappa_schedule: Fisher-averaging weights κ_t, default 1/t
        rng: random generator
        theta1: data-independent starting point (default: model.initial_theta())
        ledger: optional ledger, charged (2ε, 2δ)
        fisher: fixed per-example Fisher information used instead of the running estimate

    Returns:
        SampleTrace; noise_var holds the per-coordinate variance of Z_t
    """
    base = cfg.base
    base.check_data(data)
    N, tau = data.size, base.tau
    if tau < 2:
        raise ConfigurationError("SGFS needs minibatches of at least 2 points")
    if tau <= 4:
        raise PreconditionError(f"private covariance release needs tau > 4, got {tau}")
    if F is None:
        _require_gradient_bound(model)
    _gate_T(N, cfg)
    sigma2 = sgfs_sigma2(N, base.passes, tau, cfg.epsilon, cfg.delta) * cfg.noise_multiplier
    logger.info("DP-SGFS: %d iterations, sigma2=%.4g", base.iterations(N), sigma2)
    trace = _sgfs_iterate(model, data, base, sigma2, F, kappa_schedule, rng, theta1, fisher)
    trace.ledger_event = PrivacyBudget(2 * cfg.epsilon, 2 * cfg.delta)
    if ledger is not None:
        ledger.record("dp-sgfs", trace.ledger_event)
    return trace


# ---------------------------------------------------------------------------
# Hybrid: one posterior sample, then private SGLD without burn-in
# ---------------------------------------------------------------------------

def hybrid_run(model: ModelSpec, data: Dataset, epsilon: float, delta: float, ops_cfg, sg_cfg: SamplerConfig,
               rng: Optional[np.random.Generator] = None,
               ledger: Optional[PrivacyLedger] = None) -> SampleTrace:
    """
    Draw θ₀ by OPS at ε/2, then run DP-SGLD at (ε/2, δ) from θ₀ with no burn-in

    Args:
        model: model with finite B and L
        data: dataset
        epsilon: total ε
        delta: total δ (spent entirely by the SGLD phase)
        ops_cfg: OpsConfig for the first phase; its epsilon is overridden with ε/2
        sg_cfg: settings of the SGLD phase; passes = 0 skips it
        rng: random generator shared by both phases
        ledger: optional ledger receiving the two events

    Returns:
        SampleTrace whose ledger_event is the composed (ε, δ)
    """
    from src.ops import ops_sample

    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    rng = rng or sg_cfg.rng()
    ledger = ledger if ledger is not None else PrivacyLedger()
    half = epsilon / 2
    theta0 = ops_sample(model, data, replace(ops_cfg, epsilon=half), rng)
    ops_budget = PrivacyBudget(half, 0.0)
    ledger.record("hybrid/ops", ops_budget)

    if sg_cfg.iterations(data.size) == 0:
        trace = SampleTrace(model.dim)
        trace.append(0, theta0, 0.0, 0.0, SAMPLING)
        trace.ledger_event = ops_budget
        return trace

    private = PrivateSamplerConfig(replace(sg_cfg, burn_in_fraction=0.0), half, delta)
    trace = dp_sgld_run(model, data, private, theta0, rng, ledger=ledger, label="hybrid/dp-sgld")
    trace.ledger_event = PrivacyBudget(epsilon, delta)
    return trace
