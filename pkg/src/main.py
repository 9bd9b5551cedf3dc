"""
Main Orchestrator - Command-line entry point for private posterior sampling

Usage: python -m src.main <subcommand> [flags]

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 privacy gate refused the run.
"""
import argparse
import csv
import logging
import os
import sys
from datetime import datetime
from typing import List, Optional

import numpy as np

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import (
    BENCH_METHODS,
    BENCH_SEEDS,
    BENCH_WORKERS,
    DEFAULT_DELTA,
    DEFAULT_LAMBDA_REG,
    DEFAULT_NORM_BOUND,
    DEFAULT_PASSES,
    DEFAULT_SEED,
    LOG_LEVEL,
    OPS_CHAIN_LENGTH,
    OUTPUT_DIR,
)
from src.baselines import logistic_erm_problem, objpert_train, outpert_train
from src.data import DataSource, standardize_and_clip
from src.errors import (
    ArgumentError,
    ConfigurationError,
    DPBayesError,
    ParseError,
    PreconditionError,
    PrivacyGateError,
    SchemaError,
)
from src.harness import METHODS, SUITES, BenchmarkConfig, run_benchmark, run_verify
from src.model import Dataset, ModelSpec, clip_dataset, make_beta_bernoulli_model, make_gaussian_mean_model, make_logistic_model
from src.ops import OpsConfig, SAMPLERS, ops_chain, ops_release_budget, release_ops_sample
from src.privacy import PrivacyBudget, PrivacyLedger
from src.sgmcmc import (
    PrivateSamplerConfig,
    SamplerConfig,
    StepSchedule,
    alpha_phase_schedule,
    dp_sghmc_run,
    dp_sgfs_run,
    dp_sgld_run,
    dp_sgnht_run,
    hybrid_run,
    sghmc_run,
    sgfs_run,
    sgld_run,
    sgnht_run,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_PRIVACY_GATE = 3

CONFIG_ERRORS = (ConfigurationError, ArgumentError, PreconditionError, ParseError, SchemaError)
SG_COMMANDS = ("sgld", "sghmc", "sgnht", "sgfs")
MODELS = ("logistic", "gaussian-mean", "beta-bernoulli")


def _output_path(path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(OUTPUT_DIR, path)


def _write_samples(path: str, thetas: np.ndarray) -> None:
    thetas = np.atleast_2d(thetas)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"theta_{i}" for i in range(thetas.shape[1])])
        for theta in thetas:
            writer.writerow([repr(float(x)) for x in theta])


class PosteriorSamplingRunner:
    """Wires parsed flags to the samplers, baselines and harness"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.ledger = PrivacyLedger()

    # -- validation and inputs ------------------------------------------------

    def validate(self) -> None:
        """Flag checks that need no data"""
        args = self.args
        if getattr(args, "epsilon", None) is not None and not args.epsilon > 0:
            raise ConfigurationError(f"--epsilon must be positive, got {args.epsilon}")
        if getattr(args, "delta", None) is not None and not 0 < args.delta < 1:
            raise ConfigurationError(f"--delta must lie in (0, 1), got {args.delta}")
        for name in ("tau", "passes", "eta0", "R", "C", "chain_length", "seeds", "workers"):
            value = getattr(args, name, None)
            if value is not None and not value > 0:
                raise ConfigurationError(f"--{name.replace('_', '-')} must be positive, got {value}")
        if getattr(args, "alpha", None) is not None and not 0 < args.alpha < 1:
            raise ConfigurationError(f"--alpha must lie in (0, 1), got {args.alpha}")
        if getattr(args, "alpha", None) is not None and args.epsilon is None:
            raise ConfigurationError("--alpha needs --epsilon")
        if getattr(args, "burn_in", None) is not None and not 0 <= args.burn_in < 1:
            raise ConfigurationError("--burn-in is a fraction in [0, 1)")
        if hasattr(args, "data"):
            self.source = DataSource.parse(args.data, args.label_column, args.has_header)
            self.source.check()

    @property
    def delta(self) -> float:
        return self.args.delta if self.args.delta is not None else DEFAULT_DELTA

    def load(self) -> Dataset:
        args = self.args
        data = self.source.load(args.seed)
        model = getattr(args, "model", "logistic")
        if model == "logistic":
            data, _ = standardize_and_clip(data, args.R)
        elif model == "gaussian-mean":
            data = clip_dataset(Dataset(data.features[:, :1]), args.R)
        else:
            data = Dataset(data.features[:, :1])
        print(f"Loaded {data.size} points with {data.dim} features from {self.source}")
        return data

    def model(self, data: Dataset) -> ModelSpec:
        args = self.args
        if args.model == "logistic":
            return make_logistic_model(data.dim, args.C, args.R)
        if args.model == "gaussian-mean":
            return make_gaussian_mean_model(args.prior_var, args.noise_var, data_bound=args.R, radius=args.C)
        return make_beta_bernoulli_model(args.prior_a, args.prior_b, args.p_min)

    def sampler_config(self, data: Dataset, model: ModelSpec) -> SamplerConfig:
        args = self.args
        if args.alpha is not None:
            schedule = alpha_phase_schedule(
                args.alpha, data.size, args.passes, args.tau, model.L, args.epsilon, self.delta
            )
        elif args.eta0 is not None:
            schedule = StepSchedule.constant(args.eta0)
        else:
            schedule = StepSchedule.decay_floor(1.0, 1.0, 1.0, 1.0 / data.size)
        kwargs = {} if args.burn_in is None else {"burn_in_fraction": args.burn_in}
        return SamplerConfig(tau=args.tau, passes=args.passes, schedule=schedule, seed=args.seed, **kwargs)

    # -- subcommands -----------------------------------------------------------

    def run_ops(self) -> np.ndarray:
        args = self.args
        data = self.load()
        model = self.model(data)
        cfg = OpsConfig(args.epsilon, sampler=args.sampler, chain_length=args.chain_length, seed=args.seed)
        rng = np.random.default_rng(args.seed)
        if args.trace_out:
            if cfg.backend(model.dim) != "random_walk_mh":
                raise ConfigurationError("--trace-out is available for the random-walk MH backend only")
            chain = ops_chain(model, data, cfg, rng)
            chain.to_csv(_output_path(args.trace_out))
            self.ledger.record("ops", ops_release_budget(args.epsilon, args.l1_gap))
            return chain.last
        return release_ops_sample(model, data, cfg, self.ledger, rng, l1_gap=args.l1_gap)

    def run_sampler(self, command: str) -> np.ndarray:
        args = self.args
        data = self.load()
        model = self.model(data)
        cfg = self.sampler_config(data, model)
        rng = cfg.rng()
        theta1 = model.initial_theta()
        private = None
        if args.epsilon is not None:
            private = PrivateSamplerConfig(cfg, args.epsilon, self.delta)
        print(f"Privacy: {'off' if private is None else PrivacyBudget(args.epsilon, self.delta)}")

        if command == "sgld":
            trace = sgld_run(model, data, cfg, theta1, rng) if private is None else \
                dp_sgld_run(model, data, private, theta1, rng, self.ledger)
        elif command == "sghmc":
            trace = sghmc_run(model, data, cfg, theta1, args.friction, args.b_hat, rng) if private is None else \
                dp_sghmc_run(model, data, private, theta1, args.friction, args.b_hat, rng, self.ledger)
        elif command == "sgnht":
            trace = sgnht_run(model, data, cfg, theta1, args.friction, rng) if private is None else \
                dp_sgnht_run(model, data, private, theta1, args.friction, rng, self.ledger)
        else:
            trace = sgfs_run(model, data, cfg, rng=rng, theta1=theta1) if private is None else \
                dp_sgfs_run(model, data, private, rng=rng, theta1=theta1, ledger=self.ledger)

        print(f"Ran {len(trace)} recorded iterations")
        if args.trace_out:
            trace.to_csv(_output_path(args.trace_out))
        samples = trace.samples()
        return samples if samples.shape[0] else trace.theta_array()[-1:]

    def run_hybrid(self) -> np.ndarray:
        args = self.args
        data = self.load()
        model = self.model(data)
        cfg = self.sampler_config(data, model)
        ops_cfg = OpsConfig(args.epsilon / 2, chain_length=args.chain_length, seed=args.seed)
        trace = hybrid_run(model, data, args.epsilon, self.delta, ops_cfg, cfg, cfg.rng(), self.ledger)
        if args.trace_out:
            trace.to_csv(_output_path(args.trace_out))
        return trace.theta_array()

    def run_baseline(self, command: str) -> np.ndarray:
        args = self.args
        data = self.load()
        if data.labels is None:
            raise ConfigurationError(f"{command} needs a labeled dataset")
        problem = logistic_erm_problem(args.R, args.lambda_reg)
        rng = np.random.default_rng(args.seed)
        trainer = objpert_train if command == "objpert" else outpert_train
        return trainer(problem, data, args.epsilon, self.delta, rng, self.ledger)

    def run_bench(self) -> int:
        args = self.args
        eps_grid = sorted(args.eps)
        cfg = BenchmarkConfig(
            C=args.C, R=args.R, lambda_reg=args.lambda_reg, ops_chain_length=args.chain_length,
            workers=args.workers, master_seed=args.seed,
        )
        result = run_benchmark(args.methods, self.source, eps_grid, self.delta, list(range(args.seeds)), cfg)
        paths = result.write(_output_path(args.out))
        print(f"\n{'Method':<18}{'eps':>8}{'accuracy':>12}{'± se':>10}{'failed':>8}")
        for row in result.summary():
            print(f"{row['method']:<18}{row['epsilon']:>8.3g}{row['mean_test_accuracy']:>12.4f}"
                  f"{row['se_test_accuracy']:>10.4f}{row['failures']:>8d}")
        print(f"\nWrote {', '.join(paths)}")
        return EXIT_OK

    def run_verify(self) -> int:
        args = self.args
        results = run_verify(args.suite, seed=args.seed, tamper_noise=args.tamper_noise)
        print(f"\n{'Suite':<18}{'Check':<44}{'Result':<8}Detail")
        for r in results:
            print(f"{r.suite:<18}{r.check:<44}{'PASS' if r.passed else 'FAIL':<8}{r.detail}")
        failed = sum(not r.passed for r in results)
        print(f"\n{len(results) - failed}/{len(results)} checks passed")
        return EXIT_OK if failed == 0 else EXIT_RUNTIME

    def run(self) -> int:
        command = self.args.command
        print(f"\n{'=' * 50}")
        print(f"dpbayes {command} - {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        print(f"{'=' * 50}")
        self.validate()
        if command == "bench":
            return self.run_bench()
        if command == "verify":
            return self.run_verify()
        if command == "ops":
            released = self.run_ops()
        elif command == "hybrid":
            released = self.run_hybrid()
        elif command in ("objpert", "outpert"):
            released = self.run_baseline(command)
        else:
            released = self.run_sampler(command)
        released = np.atleast_2d(released)
        print(f"Released θ: {np.array2string(released[-1], precision=5)}")
        if self.args.out:
            _write_samples(_output_path(self.args.out), released)
        self.print_ledger()
        return EXIT_OK

    def print_ledger(self) -> None:
        print("\nPrivacy ledger")
        print("-" * 40)
        for row in self.ledger.rows():
            print(f"{row['event_label']:<20} ε={row['epsilon']:<10.6g} δ={row['delta']:.3g}")
        print(f"{'total':<20} {self.ledger.total}")
        if self.args.ledger_out:
            self.ledger.to_csv(_output_path(self.args.ledger_out))


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _method_list(text: str) -> List[str]:
    methods = [item for item in text.split(",") if item]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpbayes", description="Differentially private Bayesian learning")
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level')
    commands = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument('--data', default="synthetic:two-normals",
                       help='KIND:ARG with KIND in csv, libsvm, abalone, synthetic (default: synthetic:two-normals)')
        p.add_argument('--label-column', type=int, default=-1, help='CSV label column (default: last)')
        p.add_argument('--has-header', action='store_true', help='CSV has a header row')
        p.add_argument('--C', type=float, default=2.0, help='Parameter radius (default: 2)')
        p.add_argument('--R', type=float, default=DEFAULT_NORM_BOUND, help='Data norm bound (default: 1)')
        p.add_argument('--seed', type=int, default=DEFAULT_SEED, help='Random seed')

    def model_flags(p):
        p.add_argument('--model', choices=MODELS, default="logistic", help='Model (default: logistic)')
        p.add_argument('--prior-var', type=float, default=1.0, help='Gaussian-mean prior variance')
        p.add_argument('--noise-var', type=float, default=1.0, help='Gaussian-mean noise variance')
        p.add_argument('--prior-a', type=float, default=1.0, help='Beta prior a')
        p.add_argument('--prior-b', type=float, default=1.0, help='Beta prior b')
        p.add_argument('--p-min', type=float, default=0.1, help='Beta-Bernoulli truncation')

    def output_flags(p, trace=True):
        p.add_argument('--out', help='CSV of released samples')
        if trace:
            p.add_argument('--trace-out', help='CSV of the full chain')
        p.add_argument('--ledger-out', help='CSV of the privacy ledger')

    def sampler_flags(p):
        p.add_argument('--tau', type=int, default=10, help='Minibatch size (default: 10)')
        p.add_argument('--passes', type=float, default=DEFAULT_PASSES, help='Data passes T (default: 50)')
        p.add_argument('--eta0', type=float, help='Constant stepsize')
        p.add_argument('--alpha', type=float, help='Use the α-phase schedule with this α ∈ (0, 1)')
        p.add_argument('--burn-in', type=float, help='Burn-in fraction (default: 0.5)')

    def privacy_flags(p, required_epsilon=True):
        p.add_argument('--epsilon', type=float, required=required_epsilon, help='Privacy ε')
        p.add_argument('--delta', type=float, help=f'Privacy δ (default: DPBAYES_DELTA={DEFAULT_DELTA})')

    ops = commands.add_parser("ops", help="Release one posterior sample")
    data_flags(ops)
    model_flags(ops)
    ops.add_argument('--epsilon', type=float, required=True, help='Privacy ε (pure ε-DP, no δ)')
    ops.add_argument('--sampler', choices=SAMPLERS, default="auto", help='MCMC backend')
    ops.add_argument('--chain-length', type=int, default=OPS_CHAIN_LENGTH, help='MCMC steps')
    ops.add_argument('--l1-gap', type=float, help='Charge (ε, (1+e^ε)·gap) for an approximate sampler')
    output_flags(ops)

    for name in SG_COMMANDS:
        p = commands.add_parser(name, help=f"Run {name.upper()} (private when --epsilon is given)")
        data_flags(p)
        model_flags(p)
        privacy_flags(p, required_epsilon=False)
        sampler_flags(p)
        if name in ("sghmc", "sgnht"):
            p.add_argument('--friction', type=float, default=1.0, help='Friction a (default: 1)')
        if name == "sghmc":
            p.add_argument('--b-hat', type=float, default=0.0, help='Gradient-noise estimate b̂ (default: 0)')
        output_flags(p)

    hybrid = commands.add_parser("hybrid", help="OPS start then private SGLD")
    data_flags(hybrid)
    model_flags(hybrid)
    privacy_flags(hybrid)
    sampler_flags(hybrid)
    hybrid.add_argument('--chain-length', type=int, default=OPS_CHAIN_LENGTH, help='OPS MCMC steps')
    output_flags(hybrid)

    for name in ("objpert", "outpert"):
        p = commands.add_parser(name, help=f"Private logistic regression by {name}")
        data_flags(p)
        privacy_flags(p)
        p.add_argument('--lambda-reg', type=float, default=DEFAULT_LAMBDA_REG, help='Ridge strength')
        output_flags(p, trace=False)

    bench = commands.add_parser("bench", help="Accuracy versus ε benchmark")
    data_flags(bench)
    bench.add_argument('--eps', type=_float_list, required=True, help='Comma-separated ε grid')
    bench.add_argument('--delta', type=float, help=f'Privacy δ (default: {DEFAULT_DELTA})')
    bench.add_argument('--seeds', type=int, default=BENCH_SEEDS, help='Number of split seeds')
    bench.add_argument('--methods', type=_method_list, default=list(BENCH_METHODS), help='Comma-separated methods')
    bench.add_argument('--lambda-reg', type=float, default=DEFAULT_LAMBDA_REG, help='Ridge strength')
    bench.add_argument('--chain-length', type=int, default=OPS_CHAIN_LENGTH, help='OPS MCMC steps')
    bench.add_argument('--workers', type=int, default=BENCH_WORKERS, help='Parallel workers')
    bench.add_argument('--out', required=True, help='Results CSV')

    verify = commands.add_parser("verify", help="Run the property suites")
    verify.add_argument('--suite', action='append', choices=SUITES, help='Suite to run (repeatable)')
    verify.add_argument('--seed', type=int, default=DEFAULT_SEED, help='Random seed')
    verify.add_argument('--tamper-noise', type=float, default=1.0, help=argparse.SUPPRESS)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else LOG_LEVEL,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        return PosteriorSamplingRunner(args).run()
    except PrivacyGateError as e:
        print(f"REFUSED: {e}")
        return EXIT_PRIVACY_GATE
    except CONFIG_ERRORS as e:
        print(f"CONFIG ERROR: {e}")
        return EXIT_CONFIG
    except DPBayesError as e:
        print(f"ERROR: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    exit(main())
