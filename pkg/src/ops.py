"""
OPS - Releasing one sample from a tempered posterior

The posterior is tempered by ρ = min(1, ε/(4B)) and a single draw is released.
Sampling backends: random-walk Metropolis-Hastings, MALA, and an SGNHT chain
for higher dimensions. Finite supports get exact enumeration, an exact
exponential-mechanism draw and a brute-force privacy-ratio oracle.
"""
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import (
    OPS_BURN_IN_FRACTION,
    OPS_CHAIN_LENGTH,
    OPS_MH_MAX_DIM,
    OPS_PILOT_LENGTH,
    OPS_SCALE_FACTOR,
)
from src.errors import ArgumentError, ConfigurationError, DomainError, SamplerError
from src.model import Dataset, ModelSpec, grad_log_posterior, log_posterior_unnorm
from src.privacy import PrivacyBudget, PrivacyLedger, degrade_approx_sampling

logger = logging.getLogger(__name__)

SAMPLERS = ("auto", "random_walk_mh", "mala", "sgnht_backend")
PROB_TOL = 1e-12
TARGET_ACCEPTANCE = 0.234


@dataclass(frozen=True)
class OpsConfig:
    """
    Settings of one OPS draw.

    burn_in defaults to half the chain. proposal_scale=None estimates the scale
    from a pilot run. sampler="auto" uses random-walk MH up to dimension 10 and
    the SGNHT backend above that.
    """

    epsilon: float
    sampler: str = "auto"
    chain_length: int = OPS_CHAIN_LENGTH
    burn_in: Optional[int] = None
    proposal_scale: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"unknown OPS sampler {self.sampler!r}; choose from {', '.join(SAMPLERS)}")
        if self.chain_length < 1:
            raise ConfigurationError("chain_length must be >= 1")
        if not 0 <= self.effective_burn_in < self.chain_length:
            raise ConfigurationError(
                f"burn_in ({self.effective_burn_in}) must be smaller than chain_length ({self.chain_length})"
            )
        if self.proposal_scale is not None and not self.proposal_scale > 0:
            raise ConfigurationError(f"proposal_scale must be positive, got {self.proposal_scale}")

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is None:
            return int(OPS_BURN_IN_FRACTION * self.chain_length)
        return self.burn_in

    def backend(self, dim: int) -> str:
        if self.sampler != "auto":
            return self.sampler
        return "random_walk_mh" if dim <= OPS_MH_MAX_DIM else "sgnht_backend"


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    support: List[np.ndarray]
    probs: np.ndarray

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ArgumentError("support and probabilities differ in length")
        if np.any(self.probs < 0) or abs(float(np.sum(self.probs)) - 1.0) > PROB_TOL:
            raise ArgumentError("probabilities must be nonnegative and sum to 1")

    @property
    def argmax(self) -> int:
        # np.argmax returns the lowest index on ties
        return int(np.argmax(self.probs))


@dataclass
class OpsChain:
    """Full MH chain of one OPS draw"""

    dim: int
    thetas: List[np.ndarray] = field(default_factory=list)
    log_post: List[float] = field(default_factory=list)
    accepted: int = 0
    proposal_scale: float = float("nan")

    def __len__(self) -> int:
        return len(self.thetas)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / max(len(self.thetas), 1)

    @property
    def last(self) -> np.ndarray:
        return self.thetas[-1]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iter"] + [f"theta_{i}" for i in range(self.dim)] + ["log_post"])
            for i, (theta, lp) in enumerate(zip(self.thetas, self.log_post), start=1):
                writer.writerow([i] + [repr(float(x)) for x in theta] + [repr(lp)])


def ops_scale(B: float, epsilon: float) -> float:
    """ρ = min(1, ε/(4B))"""
    if not B > 0 or not epsilon > 0:
        raise ArgumentError(f"B and epsilon must be positive, got B={B}, epsilon={epsilon}")
    return min(1.0, epsilon / (4.0 * B))


def _require_finite_B(model: ModelSpec) -> None:
    if not math.isfinite(model.B) or not model.B > 0:
        raise ConfigurationError(f"{model.name} model declares no finite log-likelihood bound B")


def _target(model: ModelSpec, data: Dataset, rho: float):
    def log_target(theta: np.ndarray) -> float:
        if not model.contains(theta):
            return -math.inf
        try:
            value = log_posterior_unnorm(model, data, theta, rho)
        except DomainError:
            return -math.inf
        if math.isnan(value) or value == math.inf:
            raise SamplerError("non-finite log posterior", state={"theta": theta.copy(), "log_post": value})
        return value

    return log_target


def _mh_steps(log_target, theta: np.ndarray, current: float, scale: float, steps: int,
              rng: np.random.Generator, chain: Optional[OpsChain] = None):
    accepted = 0
    for _ in range(steps):
        proposal = theta + scale * rng.normal(size=theta.shape[0])
        proposed = log_target(proposal)
        if math.log(rng.uniform()) < proposed - current:
            theta, current = proposal, proposed
            accepted += 1
        if chain is not None:
            chain.thetas.append(theta.copy())
            chain.log_post.append(current)
    return theta, current, accepted


def _pilot_scale(log_target, theta: np.ndarray, current: float, rng: np.random.Generator, dim: int):
    """
    Adaptive pilot: tune a random-walk scale toward 23.4% acceptance, then set
    the proposal to 2.38/√d times the pilot's posterior scale estimate.
    """
    scale = OPS_SCALE_FACTOR / math.sqrt(dim)
    draws = []
    for k in range(1, OPS_PILOT_LENGTH + 1):
        theta, current, accepted = _mh_steps(log_target, theta, current, scale, 1, rng)
        scale *= math.exp((accepted - TARGET_ACCEPTANCE) / math.sqrt(k))
        draws.append(theta)
    tail = np.array(draws[len(draws) // 2:])
    spread = float(np.mean(np.std(tail, axis=0)))
    if spread > 0:
        scale = OPS_SCALE_FACTOR / math.sqrt(dim) * spread
    logger.debug("OPS pilot: posterior scale %.4g, proposal scale %.4g", spread, scale)
    return theta, current, scale


def ops_chain(model: ModelSpec, data: Dataset, cfg: OpsConfig,
              rng: Optional[np.random.Generator] = None) -> OpsChain:
    """
    Run the random-walk MH chain of an OPS draw and keep every state

    Args:
        model: model with finite B
        data: dataset (may be empty)
        cfg: OPS settings
        rng: random generator (defaults to one seeded from cfg.seed)

    Returns:
        OpsChain of chain_length states after the pilot run
    """
    _require_finite_B(model)
    rng = rng or np.random.default_rng(cfg.seed)
    rho = ops_scale(model.B, cfg.epsilon)
    log_target = _target(model, data, rho)
    theta = model.initial_theta()
    current = log_target(theta)
    if current == -math.inf:
        raise SamplerError("initial state has zero posterior mass", state={"theta": theta})
    if cfg.proposal_scale is None:
        theta, current, scale = _pilot_scale(log_target, theta, current, rng, model.dim)
    else:
        scale = cfg.proposal_scale
    chain = OpsChain(model.dim, proposal_scale=scale)
    _, _, chain.accepted = _mh_steps(log_target, theta, current, scale, cfg.chain_length, rng, chain)
    logger.debug("OPS chain: rho=%.4g acceptance %.3f", rho, chain.acceptance_rate)
    return chain


def _mala(model: ModelSpec, data: Dataset, cfg: OpsConfig, rng: np.random.Generator) -> np.ndarray:
    rho = ops_scale(model.B, cfg.epsilon)
    log_target = _target(model, data, rho)

    def grad(theta):
        return grad_log_posterior(model, data, theta, rho)

    theta = model.initial_theta()
    current = log_target(theta)
    if cfg.proposal_scale is None:
        theta, current, scale = _pilot_scale(log_target, theta, current, rng, model.dim)
    else:
        scale = cfg.proposal_scale
    h = scale**2
    g = grad(theta)
    for _ in range(cfg.chain_length):
        mean_fwd = theta + 0.5 * h * g
        proposal = mean_fwd + scale * rng.normal(size=model.dim)
        proposed = log_target(proposal)
        if proposed == -math.inf:
            continue
        g_prop = grad(proposal)
        mean_back = proposal + 0.5 * h * g_prop
        log_q_fwd = -float(np.sum((proposal - mean_fwd) ** 2)) / (2 * h)
        log_q_back = -float(np.sum((theta - mean_back) ** 2)) / (2 * h)
        if math.log(rng.uniform()) < proposed - current + log_q_back - log_q_fwd:
            theta, current, g = proposal, proposed, g_prop
        if not np.all(np.isfinite(g)):
            raise SamplerError("non-finite gradient in MALA", state={"theta": theta.copy()})
    return theta


def _sgnht_backend(model: ModelSpec, data: Dataset, cfg: OpsConfig, rng: np.random.Generator) -> np.ndarray:
    from src.sgmcmc import SamplerConfig, StepSchedule, sgnht_run

    rho = ops_scale(model.B, cfg.epsilon)
    N = data.size
    tau = min(N, 100)
    eta = 0.01 / max(1.0, N * rho * max(model.L, 1.0) ** 2)
    sg_cfg = SamplerConfig(
        tau=tau,
        passes=cfg.chain_length * tau / N,
        schedule=StepSchedule.constant(eta),
        burn_in_fraction=cfg.effective_burn_in / cfg.chain_length,
        rho=rho,
    )
    trace = sgnht_run(model, data, sg_cfg, model.initial_theta(), a=math.sqrt(eta), rng=rng)
    return trace.last


def ops_sample(model: ModelSpec, data: Dataset, cfg: OpsConfig,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    One draw from the posterior tempered by ρ = ops_scale(B, ε)

    The chain starts from the data-independent model.initial_theta(). Under
    exact sampling the release costs (ε, 0); see release_ops_sample.

    Args:
        model: model with finite B
        data: dataset; an empty one samples the tempered prior
        cfg: OPS settings
        rng: random generator (defaults to one seeded from cfg.seed)

    Returns:
        The final state of the chain
    """
    _require_finite_B(model)
    rng = rng or np.random.default_rng(cfg.seed)
    backend = cfg.backend(model.dim)
    if backend == "sgnht_backend" and data.size == 0:
        backend = "random_walk_mh"
    if backend == "mala":
        return _mala(model, data, cfg, rng)
    if backend == "sgnht_backend":
        return _sgnht_backend(model, data, cfg, rng)
    return ops_chain(model, data, cfg, rng).last


def ops_release_budget(epsilon: float, l1_gap: Optional[float] = None) -> PrivacyBudget:
    """(ε, 0) for an exact draw, (ε, (1+e^ε)·l1_gap) for an approximate one"""
    return PrivacyBudget(epsilon, 0.0) if l1_gap is None else degrade_approx_sampling(epsilon, l1_gap)


def release_ops_sample(model: ModelSpec, data: Dataset, cfg: OpsConfig, ledger: PrivacyLedger,
                       rng: Optional[np.random.Generator] = None,
                       l1_gap: Optional[float] = None) -> np.ndarray:
    """Draw and release one OPS sample, charging (ε, 0) or (ε, (1+e^ε)·l1_gap)"""
    theta = ops_sample(model, data, cfg, rng)
    ledger.record("ops", ops_release_budget(cfg.epsilon, l1_gap))
    return theta


# ---------------------------------------------------------------------------
# Finite supports
# ---------------------------------------------------------------------------

def _support_log_mass(support: Sequence, model: ModelSpec, data: Dataset, rho: float) -> np.ndarray:
    if len(support) == 0:
        raise ArgumentError("support is empty")
    return np.array([log_posterior_unnorm(model, data, theta, rho) for theta in support])


def posterior_enumerate(support: Sequence, model: ModelSpec, data: Dataset, rho: float) -> DiscretePosterior:
    """
    Exact tempered posterior over a finite support, normalized in log space

    Args:
        support: candidate parameters, each inside the model domain
        model: model contract
        data: dataset
        rho: tempering exponent (0 flattens the posterior)

    Returns:
        DiscretePosterior with probs[j] ∝ exp(ρ·Σᵢ log p(xᵢ|θⱼ) + ρ·log π(θⱼ))
    """
    log_mass = _support_log_mass(support, model, data, rho)
    if np.all(log_mass == -np.inf):
        raise ArgumentError("every support point has zero posterior mass")
    probs = np.exp(log_mass - logsumexp(log_mass))
    probs /= probs.sum()
    return DiscretePosterior([model._as_theta(theta) for theta in support], probs)


def ops_sample_discrete(support: Sequence, model: ModelSpec, data: Dataset, epsilon: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Exact OPS draw over a finite support (exponential mechanism with log-likelihood utility)"""
    _require_finite_B(model)
    posterior = posterior_enumerate(support, model, data, ops_scale(model.B, epsilon))
    return posterior.support[int(rng.choice(len(posterior.probs), p=posterior.probs))]


def discrete_metropolis_chain(support: Sequence, model: ModelSpec, data: Dataset, rho: float,
                              length: int, rng: np.random.Generator) -> np.ndarray:
    """
    Metropolis over a finite support with uniform proposals among the other points

    Returns:
        Array of visited support indices, one per step
    """
    log_mass = _support_log_mass(support, model, data, rho)
    m = len(log_mass)
    visits = np.empty(length, dtype=int)
    current = int(np.argmax(log_mass))
    for step in range(length):
        if m > 1:
            proposal = int(rng.integers(0, m - 1))
            if proposal >= current:
                proposal += 1
            if math.log(rng.uniform()) < log_mass[proposal] - log_mass[current]:
                current = proposal
        visits[step] = current
    return visits


@dataclass(frozen=True)
class DpRatioReport:
    max_log_ratio: float
    epsilon_claim: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_log_ratio <= self.epsilon_claim * (1 + 1e-12)


def dp_log_ratio(support: Sequence, model: ModelSpec, data: Dataset, data_prime: Dataset, rho: float) -> float:
    """max_θ |log p(θ|X) − log p(θ|X′)| over the support"""
    p = posterior_enumerate(support, model, data, rho).probs
    q = posterior_enumerate(support, model, data_prime, rho).probs
    with np.errstate(divide="ignore"):
        gap = np.abs(np.log(p) - np.log(q))
    both_zero = (p == 0) & (q == 0)
    return float(np.max(np.where(both_zero, 0.0, gap)))


def verify_dp_ratio(support: Sequence, model: ModelSpec, data: Dataset, epsilon_claim: float,
                    trials: int, rng: np.random.Generator, rho: float = 1.0,
                    base_sampler: Optional[Callable[[np.random.Generator], Dataset]] = None) -> DpRatioReport:
    """
    Brute-force the privacy ratio over random neighbors of data

    Each trial replaces one random record by a fresh point from model.probe and
    measures the largest posterior log-ratio over the support. With base_sampler
    every trial first draws its own base dataset and data is ignored.
    """
    worst = 0.0
    for _ in range(trials):
        base = data if base_sampler is None else base_sampler(rng)
        if base.size == 0:
            continue
        index = int(rng.integers(0, base.size))
        _, x, y = model.probe(rng)
        neighbor = base.replace_point(index, x, y)
        worst = max(worst, dp_log_ratio(support, model, base, neighbor, rho))
    logger.info("DP ratio oracle: max log-ratio %.4f against claim %.4f", worst, epsilon_claim)
    return DpRatioReport(worst, epsilon_claim, trials)
