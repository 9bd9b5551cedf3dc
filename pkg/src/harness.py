"""
Harness - Benchmarks, Monte-Carlo oracles and verification suites

Runs (method, ε, seed) benchmark cells on a train/test split, estimates the
asymptotic relative efficiency of one-posterior sampling, checks sampler
moments against closed-form posteriors with batch-means standard errors, and
bundles the property suites behind `verify`.
"""
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config.settings import (
    BATCH_MEANS_BATCHES,
    BENCH_METHODS,
    BENCH_WORKERS,
    DEFAULT_LAMBDA_REG,
    DEFAULT_NORM_BOUND,
    MIN_TRACE_LENGTH,
    OPS_CHAIN_LENGTH,
    TRAIN_FRACTION,
    VERIFY_ARE_REPLICATES,
    VERIFY_COV_TRIALS,
    VERIFY_DP_RATIO_TRIALS,
)
from src.baselines import erm_train, logistic_erm_problem, objpert_train, outpert_train
from src.data import DataSource, standardize_and_clip, train_test_split
from src.errors import ArgumentError, ConfigurationError, DPBayesError
from src.model import (
    BetaBernoulliModel,
    Dataset,
    GaussianMeanModel,
    ModelSpec,
    make_beta_bernoulli_model,
    make_gaussian_mean_model,
    make_logistic_model,
)
from src.ops import OpsConfig, ops_scale, release_ops_sample, verify_dp_ratio
from src.privacy import (
    PrivacyBudget,
    PrivacyLedger,
    T_threshold,
    compose_advanced,
    cov_sensitivity_bound,
    gaussian_sigma,
    sgld_noise_variance,
)
from src.sgmcmc import PrivateSamplerConfig, SampleTrace, SamplerConfig, StepSchedule, dp_sgld_run, hybrid_run

logger = logging.getLogger(__name__)

METHODS = ("ops", "hybrid", "objpert", "outpert", "dp_sgld", "non_private_erm")
RESULT_FIELDS = [
    "method", "epsilon", "delta", "seed", "test_accuracy", "test_nll",
    "runtime_ms", "ledger_epsilon", "ledger_delta", "error",
]
LEDGER_TOL = 1e-12


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _require_labels(test: Dataset) -> np.ndarray:
    if test.labels is None:
        raise ArgumentError("metrics need a labeled test set")
    if test.size == 0:
        raise ArgumentError("test set is empty")
    return test.labels


def accuracy(theta, test: Dataset) -> float:
    """Fraction with sign(θᵀx) = y; a zero margin counts one half"""
    labels = _require_labels(test)
    margins = test.features @ np.asarray(theta, dtype=float)
    hits = np.where(margins == 0, 0.5, (np.sign(margins) == labels).astype(float))
    return float(np.mean(hits))


def nll(theta, test: Dataset) -> float:
    """Mean logistic loss"""
    labels = _require_labels(test)
    margins = labels * (test.features @ np.asarray(theta, dtype=float))
    return float(np.mean(np.logaddexp(0.0, -margins)))


def batch_means_se(values, batches: int = BATCH_MEANS_BATCHES) -> float:
    """Autocorrelation-adjusted standard error of the mean by non-overlapping batch means"""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < batches:
        raise ArgumentError(f"need at least {batches} values for batch means, got {values.shape[0]}")
    size = values.shape[0] // batches
    means = values[: size * batches].reshape(batches, size, *values.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / math.sqrt(batches)


@dataclass(frozen=True)
class MomentReport:
    mean: np.ndarray
    var: np.ndarray
    mean_se: np.ndarray
    var_se: np.ndarray
    oracle_mean: np.ndarray
    oracle_var: np.ndarray
    tol: float

    @property
    def mean_ok(self) -> bool:
        return bool(np.all(np.abs(self.mean - self.oracle_mean) <= self.tol * self.mean_se))

    @property
    def var_ok(self) -> bool:
        return bool(np.all(np.abs(self.var - self.oracle_var) <= self.tol * self.var_se))

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.var_ok


def posterior_moment_check(trace, oracle_mean, oracle_var, tol: float = 3.0) -> MomentReport:
    """
    Compare sample mean and variance with closed-form values, tolerance in batch-means SEs

    Args:
        trace: SampleTrace (its sampling phase is used) or an array of draws
        oracle_mean: expected mean per coordinate
        oracle_var: expected variance per coordinate
        tol: allowed deviation in standard errors
    """
    samples = trace.samples() if isinstance(trace, SampleTrace) else np.asarray(trace, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < MIN_TRACE_LENGTH:
        raise ArgumentError(f"moment check needs >= {MIN_TRACE_LENGTH} post-burn-in iterates, got {samples.shape[0]}")
    mean = samples.mean(axis=0)
    centered = (samples - mean) ** 2
    return MomentReport(
        mean=mean,
        var=centered.mean(axis=0),
        mean_se=np.atleast_1d(batch_means_se(samples)),
        var_se=np.atleast_1d(batch_means_se(centered)),
        oracle_mean=np.atleast_1d(np.asarray(oracle_mean, dtype=float)),
        oracle_var=np.atleast_1d(np.asarray(oracle_var, dtype=float)),
        tol=tol,
    )


def are_estimate(model: ModelSpec, theta0: float, n: int, epsilon: float, replicates: int,
                 rng: np.random.Generator) -> float:
    """
    Empirical asymptotic relative efficiency of one-posterior sampling

    Each replicate simulates n observations at θ₀ and draws one exact sample
    from the tempered posterior (closed form); returns n·I(θ₀)·Var(draws).
    Supports the Beta-Bernoulli and bounded Gaussian-mean models.
    """
    if replicates < 2:
        raise ArgumentError("need at least 2 replicates")
    rho = ops_scale(model.B, epsilon)
    if isinstance(model, BetaBernoulliModel):
        successes = rng.binomial(n, theta0, size=replicates)
        draws = model.sample_tempered_posterior(np.full(replicates, n), successes, rho, rng)
        info = model.fisher_information(theta0)
    elif isinstance(model, GaussianMeanModel):
        sample_means = rng.normal(theta0, math.sqrt(model.noise_var / n), size=replicates)
        if model.flat_prior:
            centers = sample_means
            var = model.noise_var / n
        else:
            centers = n * sample_means / (n + model.noise_var / model.prior_var)
            var = 1.0 / (n / model.noise_var + 1.0 / model.prior_var)
        draws = rng.normal(centers, math.sqrt(var / rho))
        info = model.fisher_information(theta0)
    else:
        raise ConfigurationError(f"no closed-form tempered posterior for the {model.name} model")
    return float(n * info * np.var(draws, ddof=1))


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    """
    Settings shared by every benchmark cell.

    hybrid_passes / sgld_passes = None pick the smallest pass count that clears
    the privacy gate (at least one pass). eta0 = None uses 1/N_train.
    """

    C: float = 2.0
    R: float = DEFAULT_NORM_BOUND
    lambda_reg: float = DEFAULT_LAMBDA_REG
    ops_chain_length: int = OPS_CHAIN_LENGTH
    tau: int = 100
    passes: Optional[float] = None
    eta0: Optional[float] = None
    train_fraction: float = TRAIN_FRACTION
    workers: int = BENCH_WORKERS
    master_seed: int = 0

    def __post_init__(self):
        if not self.C > 0 or not self.R > 0:
            raise ConfigurationError("C and R must be positive")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def sg_config(self, N: int, epsilon: float, delta: float) -> SamplerConfig:
        tau = min(self.tau, N)
        passes = self.passes
        if passes is None:
            passes = max(1.0, math.ceil(T_threshold(N, tau, epsilon, delta)))
        eta0 = self.eta0 if self.eta0 is not None else 1.0 / N
        return SamplerConfig(tau=tau, passes=passes, schedule=StepSchedule.constant(eta0))


@dataclass
class BenchmarkResult:
    rows: List[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def summary(self) -> List[dict]:
        """Mean ± standard error of accuracy and NLL per (method, ε), failures counted"""
        groups: Dict[tuple, List[dict]] = {}
        for row in self.rows:
            groups.setdefault((row["method"], row["epsilon"]), []).append(row)
        out = []
        for (method, epsilon), rows in sorted(groups.items(), key=lambda item: (item[0][0], item[0][1])):
            ok = [r for r in rows if not r["error"]]
            entry = {"method": method, "epsilon": epsilon, "n": len(ok), "failures": len(rows) - len(ok)}
            for metric in ("test_accuracy", "test_nll"):
                values = np.array([r[metric] for r in ok], dtype=float)
                entry[f"mean_{metric}"] = float(values.mean()) if values.size else float("nan")
                entry[f"se_{metric}"] = (
                    float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else float("nan")
                )
            out.append(entry)
        return out

    def to_csv(self, path: str) -> None:
        _write_rows(path, RESULT_FIELDS, self.rows)

    def summary_to_csv(self, path: str) -> None:
        summary = self.summary()
        if summary:
            _write_rows(path, list(summary[0].keys()), summary)

    def write(self, path: str) -> List[str]:
        """Results, summary (<stem>_summary.csv) and metadata (<stem>_meta.json)"""
        stem, _ = os.path.splitext(path)
        summary_path, meta_path = f"{stem}_summary.csv", f"{stem}_meta.json"
        self.to_csv(path)
        self.summary_to_csv(summary_path)
        with open(meta_path, "w", encoding="utf-8") as handle:
            json.dump(self.metadata, handle, indent=2, sort_keys=True)
        return [path, summary_path, meta_path]


def _write_rows(path: str, fields: List[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _train_method(method: str, train: Dataset, epsilon: float, delta: float, cfg: BenchmarkConfig,
                  rng: np.random.Generator, ledger: PrivacyLedger) -> np.ndarray:
    model = make_logistic_model(train.dim, cfg.C, cfg.R)
    problem = logistic_erm_problem(cfg.R, cfg.lambda_reg)
    if method == "ops":
        ops_cfg = OpsConfig(epsilon, chain_length=cfg.ops_chain_length)
        return release_ops_sample(model, train, ops_cfg, ledger, rng)
    if method == "hybrid":
        ops_cfg = OpsConfig(epsilon / 2, chain_length=cfg.ops_chain_length)
        sg_cfg = cfg.sg_config(train.size, epsilon / 2, delta)
        return hybrid_run(model, train, epsilon, delta, ops_cfg, sg_cfg, rng, ledger).last
    if method == "dp_sgld":
        private = PrivateSamplerConfig(cfg.sg_config(train.size, epsilon, delta), epsilon, delta)
        return dp_sgld_run(model, train, private, model.initial_theta(), rng, ledger).last
    if method == "objpert":
        return objpert_train(problem, train, epsilon, delta, rng, ledger)
    if method == "outpert":
        return outpert_train(problem, train, epsilon, delta, rng, ledger)
    if method == "non_private_erm":
        return erm_train(problem, train)
    raise ConfigurationError(f"unknown benchmark method {method!r}")


def _run_cell(task: tuple) -> dict:
    method, epsilon, delta, seed, train, test, cfg, seed_seq = task
    rng = np.random.default_rng(seed_seq)
    ledger = PrivacyLedger()
    row = {"method": method, "epsilon": epsilon, "delta": delta, "seed": seed, "error": ""}
    started = time.perf_counter()
    try:
        theta = _train_method(method, train, epsilon, delta, cfg, rng, ledger)
        row["test_accuracy"] = accuracy(theta, test)
        row["test_nll"] = nll(theta, test)
    except DPBayesError as exc:
        logger.warning("cell %s eps=%g seed=%d failed: %s", method, epsilon, seed, exc)
        row["test_accuracy"] = row["test_nll"] = float("nan")
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["runtime_ms"] = 1000.0 * (time.perf_counter() - started)
    if method == "non_private_erm":
        row["ledger_epsilon"] = row["ledger_delta"] = float("nan")
    else:
        total = ledger.total
        row["ledger_epsilon"], row["ledger_delta"] = total.epsilon, total.delta
        if total.epsilon > epsilon + LEDGER_TOL or total.delta > delta + LEDGER_TOL:
            row["error"] = row["error"] or f"ledger overspend {total}"
    return row


def run_benchmark(methods: Sequence[str], source, eps_grid: Sequence[float], delta: float,
                  seeds: Sequence[int], cfg: Optional[BenchmarkConfig] = None) -> BenchmarkResult:
    """
    Evaluate every (method, ε, seed) cell

    Args:
        methods: names from METHODS
        source: DataSource or an already loaded Dataset
        eps_grid: privacy levels
        delta: δ for the (ε, δ) methods
        seeds: split seeds; each seed fixes the train/test split
        cfg: shared settings

    Returns:
        BenchmarkResult with one row per cell; failed cells carry the error message
    """
    cfg = cfg or BenchmarkConfig()
    if not methods or not eps_grid or not seeds:
        raise ArgumentError("methods, eps_grid and seeds must be nonempty")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigurationError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    data = source.load(cfg.master_seed) if isinstance(source, DataSource) else source
    splits = {}
    for seed in seeds:
        train, test = train_test_split(data, cfg.train_fraction, seed)
        train, standardizer = standardize_and_clip(train, cfg.R)
        test, _ = standardize_and_clip(test, cfg.R, standardizer)
        splits[seed] = (train, test)

    cells = [(m, float(e), s) for m in methods for e in eps_grid for s in seeds]
    seed_seqs = np.random.SeedSequence(cfg.master_seed).spawn(len(cells))
    tasks = [(m, e, delta, s, *splits[s], cfg, seq) for (m, e, s), seq in zip(cells, seed_seqs)]
    logger.info("Benchmark: %d cells on %d points (%d workers)", len(tasks), data.size, cfg.workers)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(task) for task in tasks]

    metadata = {
        "source": str(source) if isinstance(source, DataSource) else "in-memory",
        "n_points": data.size,
        "dim": data.dim,
        "methods": list(methods),
        "eps_grid": [float(e) for e in eps_grid],
        "delta": delta,
        "seeds": list(seeds),
        "config": asdict(cfg),
    }
    return BenchmarkResult(rows, metadata)


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------

SUITES = ("calibration", "dp-ratio", "cov-sensitivity", "are", "noise-audit")


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    check: str
    passed: bool
    detail: str = ""


def _calibration_suite(rng: np.random.Generator, tamper_noise: float) -> List[SuiteResult]:
    checks = [
        ("ops_scale(2.5, 1) = 0.1", math.isclose(ops_scale(2.5, 1.0), 0.1)),
        ("ops_scale caps at 1", ops_scale(0.5, 10.0) == 1.0),
        ("gaussian_sigma(1, 0.5, 1e-5) ≈ 9.6896",
         math.isclose(gaussian_sigma(1.0, 0.5, 1e-5), 2 * math.sqrt(2 * math.log(1.25e5)), rel_tol=1e-12)),
        ("advanced composition delta = kδ + δ'",
         math.isclose(compose_advanced(0.1, 1e-6, 10, 1e-5).delta, 2e-5, rel_tol=1e-12)),
        ("SGLD noise floor equals η when privacy term is small",
         sgld_noise_variance(100, 1, 10, 1e-6, 10.0, 1e-4, 1e-3) == 1e-3),
    ]
    return [SuiteResult("calibration", name, bool(ok)) for name, ok in checks]


def _dp_ratio_suite(rng: np.random.Generator, tamper_noise: float) -> List[SuiteResult]:
    # support {0.3, 0.7} under a uniform prior truncated to [0.3, 0.7], B = −ln 0.3
    model = make_beta_bernoulli_model(1.0, 1.0, 0.3)
    support = [np.array([0.3]), np.array([0.7])]

    def coins(gen: np.random.Generator) -> Dataset:
        return Dataset(gen.integers(0, 2, size=(int(gen.integers(1, 21)), 1)).astype(float))

    trials = VERIFY_DP_RATIO_TRIALS // 4
    unused = Dataset(np.empty((0, 1)))
    results = []
    report = verify_dp_ratio(support, model, unused, 4 * model.B, trials, rng, base_sampler=coins)
    results.append(SuiteResult("dp-ratio", "untempered ratio <= 4B", report.passed,
                               f"max {report.max_log_ratio:.4f} vs {4 * model.B:.4f}"))
    for epsilon in (0.1, 1.0, 4 * model.B):
        rho = ops_scale(model.B, epsilon)
        report = verify_dp_ratio(support, model, unused, epsilon, trials, rng, rho=rho, base_sampler=coins)
        results.append(SuiteResult("dp-ratio", f"tempered ratio <= eps={epsilon:.4g}", report.passed,
                                   f"max {report.max_log_ratio:.4f}"))
    return results


def _cov_sensitivity_suite(rng: np.random.Generator, tamper_noise: float) -> List[SuiteResult]:
    dim, L = 3, 1.0
    worst = 0.0
    for _ in range(VERIFY_COV_TRIALS):
        n = int(rng.integers(5, 51))
        directions = rng.normal(size=(n + 1, dim))
        points = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        points *= L * rng.uniform(size=(n + 1, 1)) ** (1.0 / dim)
        before = np.cov(points[:n], rowvar=False, ddof=1)
        swapped = points[:n].copy()
        swapped[int(rng.integers(0, n))] = points[n]
        after = np.cov(swapped, rowvar=False, ddof=1)
        worst = max(worst, float(np.linalg.norm(before - after, "fro")) / cov_sensitivity_bound(L, n))
    return [SuiteResult("cov-sensitivity", "Frobenius change <= 7L²/(n−1)", worst <= 1.0,
                        f"worst ratio {worst:.4f}")]


def _are_suite(rng: np.random.Generator, tamper_noise: float) -> List[SuiteResult]:
    model = make_beta_bernoulli_model(1.0, 1.0, 0.1)
    results = []
    for multiple in (1, 2, 4):
        epsilon = multiple * model.B
        predicted = 1 + 4 * model.B / epsilon
        estimate = are_estimate(model, 0.6, 2000, epsilon, VERIFY_ARE_REPLICATES, rng)
        ok = abs(estimate - predicted) <= 0.15 * predicted
        results.append(SuiteResult("are", f"ARE at eps={multiple}B", ok,
                                   f"estimate {estimate:.3f} vs {predicted:.3f}"))
    return results


def _noise_audit_suite(rng: np.random.Generator, tamper_noise: float) -> List[SuiteResult]:
    model = make_gaussian_mean_model(1.0, 1.0, data_bound=3.0, radius=2.0)
    data = Dataset(np.clip(rng.normal(1.0, 1.0, size=(200, 1)), -3.0, 3.0))
    base = SamplerConfig(tau=20, passes=2, schedule=StepSchedule.decay(1e-3, 1.0, 0.55), seed=0)
    private = PrivateSamplerConfig(base, 1.0, 1e-4, noise_multiplier=tamper_noise)
    trace = dp_sgld_run(model, data, private, model.initial_theta(), rng)

    def planned(t: int, eta: float) -> float:
        return sgld_noise_variance(data.size, base.passes, base.tau, model.L, 1.0, 1e-4, eta)

    bad = trace.noise_audit(planned)
    return [SuiteResult("noise-audit", "injected variance matches planner", not bad,
                        f"{len(bad)} of {len(trace)} iterates differ")]


_SUITE_RUNNERS = {
    "calibration": _calibration_suite,
    "dp-ratio": _dp_ratio_suite,
    "cov-sensitivity": _cov_sensitivity_suite,
    "are": _are_suite,
    "noise-audit": _noise_audit_suite,
}


def run_verify(suites: Optional[Sequence[str]] = None, seed: int = 0, tamper_noise: float = 1.0) -> List[SuiteResult]:
    """
    Run property suites at desk scale

    Args:
        suites: names from SUITES; all when None
        seed: master seed
        tamper_noise: multiplier on injected noise variance (1.0 in real use)
    """
    names = list(SUITES) if suites is None else list(suites)
    unknown = [name for name in names if name not in _SUITE_RUNNERS]
    if unknown:
        raise ConfigurationError(f"unknown suites {unknown}; choose from {', '.join(SUITES)}")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    results: List[SuiteResult] = []
    for name, seq in zip(names, seqs):
        logger.info("Running %s suite", name)
        results.extend(_SUITE_RUNNERS[name](np.random.default_rng(seq), tamper_noise))
    return results
