"""
Tests for metrics, Monte-Carlo oracles, the benchmark and the verify suites
"""
import csv
import json
import math

import numpy as np
import pytest

from src import harness
from src.data import make_two_normals
from src.errors import ArgumentError, ConfigurationError
from src.harness import (
    RESULT_FIELDS,
    BenchmarkConfig,
    accuracy,
    are_estimate,
    batch_means_se,
    nll,
    posterior_moment_check,
    run_benchmark,
    run_verify,
)
from src.model import Dataset, make_beta_bernoulli_model, make_gaussian_mean_model


@pytest.fixture(scope="module")
def small_data():
    return make_two_normals(200, 2, 4.0, seed=0)


@pytest.fixture(scope="module")
def small_cfg():
    return BenchmarkConfig(ops_chain_length=200)


class TestMetrics:
    def test_zero_parameter(self, separable_data):
        assert accuracy(np.zeros(2), separable_data) == 0.5
        assert nll(np.zeros(2), separable_data) == pytest.approx(math.log(2))

    def test_separated_points(self):
        data = Dataset(np.array([[1.0, 0.0], [-1.0, 0.0], [0.5, 0.2]]), np.array([1.0, -1.0, 1.0]))
        assert accuracy([1.0, 0.0], data) == 1.0
        assert accuracy([-1.0, 0.0], data) == 0.0

    def test_needs_labels(self):
        with pytest.raises(ArgumentError):
            accuracy([0.0], Dataset(np.ones((3, 1))))


class TestBatchMeans:
    def test_iid_matches_naive_error(self, rng):
        values = rng.normal(size=30_000)
        assert batch_means_se(values) == pytest.approx(1 / math.sqrt(30_000), rel=0.3)

    def test_correlated_chain_has_larger_error(self, rng):
        noise = rng.normal(size=30_000)
        chain = np.empty_like(noise)
        chain[0] = noise[0]
        for i in range(1, noise.size):
            chain[i] = 0.9 * chain[i - 1] + noise[i]
        naive = chain.std() / math.sqrt(chain.size)
        assert batch_means_se(chain) > 2 * naive

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            batch_means_se(np.ones(10))


class TestMomentCheck:
    def test_iid_draws_pass(self, rng):
        draws = rng.normal(0.5, 2.0, size=(30_000, 2))
        assert posterior_moment_check(draws, [0.5, 0.5], [4.0, 4.0]).passed

    def test_shifted_mean_fails(self, rng):
        draws = rng.normal(0.0, 1.0, size=30_000)
        report = posterior_moment_check(draws, 10 / math.sqrt(30_000), 1.0)
        assert not report.mean_ok
        assert report.var_ok

    def test_wrong_variance_fails(self, rng):
        draws = rng.normal(0.0, 1.0, size=30_000)
        assert not posterior_moment_check(draws, 0.0, 1.5).var_ok

    def test_short_trace(self, rng):
        with pytest.raises(ArgumentError):
            posterior_moment_check(rng.normal(size=500), 0.0, 1.0)


class TestAre:
    def test_rejects_unsupported_model(self, logistic_model, rng):
        with pytest.raises(ConfigurationError):
            are_estimate(logistic_model, 0.0, 100, 1.0, 10, rng)

    @pytest.mark.slow
    @pytest.mark.parametrize("multiple, expected", [(4, 2.0), (1, 5.0)])
    def test_beta_bernoulli(self, rng, multiple, expected):
        model = make_beta_bernoulli_model(1.0, 1.0, 0.1)
        estimate = are_estimate(model, 0.6, 2000, multiple * model.B, 4000, rng)
        assert estimate == pytest.approx(expected, rel=0.1)

    @pytest.mark.slow
    def test_gaussian_mean(self, rng):
        model = make_gaussian_mean_model(1.0, 1.0, data_bound=3.0, radius=2.0)
        estimate = are_estimate(model, 0.3, 1000, 4 * model.B, 4000, rng)
        assert estimate == pytest.approx(2.0, rel=0.1)


class TestBenchmark:
    METHODS = ["ops", "objpert", "non_private_erm"]

    def test_rows_and_ledgers(self, small_data, small_cfg):
        result = run_benchmark(self.METHODS, small_data, [0.5, 1.0], 1e-4, [0, 1], small_cfg)
        assert len(result.rows) == 3 * 2 * 2
        for row in result.rows:
            assert row["error"] == ""
            assert 0.0 <= row["test_accuracy"] <= 1.0
            if row["method"] == "non_private_erm":
                assert math.isnan(row["ledger_epsilon"])
            else:
                assert row["ledger_epsilon"] <= row["epsilon"] + 1e-12
                assert row["ledger_delta"] <= row["delta"] + 1e-12

    def test_non_private_constant_across_epsilon(self, small_data, small_cfg):
        result = run_benchmark(["non_private_erm"], small_data, [0.1, 1.0, 10.0], 1e-4, [3], small_cfg)
        accs = {row["test_accuracy"] for row in result.rows}
        assert len(accs) == 1

    def test_reproducible(self, small_data, small_cfg):
        first = run_benchmark(self.METHODS, small_data, [1.0], 1e-4, [0], small_cfg)
        second = run_benchmark(self.METHODS, small_data, [1.0], 1e-4, [0], small_cfg)
        strip = lambda rows: [{k: repr(v) for k, v in r.items() if k != "runtime_ms"} for r in rows]
        assert strip(first.rows) == strip(second.rows)

    def test_private_samplers_run(self, small_data, small_cfg):
        result = run_benchmark(["hybrid", "dp_sgld"], small_data, [1.0], 1e-4, [0], small_cfg)
        assert [row["error"] for row in result.rows] == ["", ""]
        hybrid = result.rows[0]
        assert hybrid["ledger_epsilon"] == pytest.approx(1.0)

    def test_outpert_failure_is_recorded(self, small_data, small_cfg):
        result = run_benchmark(["outpert"], small_data, [0.5, 2.0], 1e-4, [0], small_cfg)
        ok, failed = result.rows
        assert ok["error"] == ""
        assert failed["error"].startswith("PreconditionError")
        assert math.isnan(failed["test_accuracy"])
        summary = {row["epsilon"]: row for row in result.summary()}
        assert summary[2.0]["failures"] == 1

    def test_outputs(self, small_data, small_cfg, tmp_path):
        result = run_benchmark(self.METHODS, small_data, [1.0], 1e-4, [0, 1], small_cfg)
        results_path, summary_path, meta_path = result.write(str(tmp_path / "results.csv"))
        with open(results_path, newline="") as handle:
            reader = csv.DictReader(handle)
            assert reader.fieldnames == RESULT_FIELDS
            assert len(list(reader)) == 6
        with open(summary_path, newline="") as handle:
            summary = list(csv.DictReader(handle))
        assert {row["method"] for row in summary} == set(self.METHODS)
        assert all(row["n"] == "2" for row in summary)
        with open(meta_path) as handle:
            meta = json.load(handle)
        assert meta["seeds"] == [0, 1]
        assert meta["config"]["train_fraction"] == 0.8

    @pytest.mark.parametrize("methods, eps, seeds", [([], [1.0], [0]), (["ops"], [], [0]), (["ops"], [1.0], [])])
    def test_empty_grid(self, small_data, methods, eps, seeds):
        with pytest.raises(ArgumentError):
            run_benchmark(methods, small_data, eps, 1e-4, seeds)

    def test_unknown_method(self, small_data):
        with pytest.raises(ConfigurationError):
            run_benchmark(["laplace"], small_data, [1.0], 1e-4, [0])

    @pytest.mark.slow
    def test_ops_close_to_erm_at_large_epsilon(self):
        data = make_two_normals(2000, 2, 4.0, seed=0)
        result = run_benchmark(["ops", "non_private_erm"], data, [10.0], 1e-4, list(range(20)))
        summary = {row["method"]: row for row in result.summary()}
        gap = summary["non_private_erm"]["mean_test_accuracy"] - summary["ops"]["mean_test_accuracy"]
        assert gap <= 0.03

    @pytest.mark.slow
    def test_ops_at_least_objpert_across_epsilon(self):
        data = make_two_normals(2000, 2, 4.0, seed=0)
        result = run_benchmark(["ops", "objpert"], data, [0.1, 1.0, 10.0], 1e-4, list(range(20)))
        means = {(row["method"], row["epsilon"]): row["mean_test_accuracy"] for row in result.summary()}
        for epsilon in (0.1, 1.0, 10.0):
            assert means[("ops", epsilon)] >= means[("objpert", epsilon)]


class TestVerify:
    def test_calibration_passes(self):
        results = run_verify(["calibration"])
        assert len(results) == 5
        assert all(r.passed for r in results)

    def test_noise_audit(self):
        assert all(r.passed for r in run_verify(["noise-audit"]))

    def test_tampered_noise_is_caught(self):
        results = run_verify(["dp-ratio", "noise-audit"], tamper_noise=0.25)
        by_suite = {}
        for r in results:
            by_suite.setdefault(r.suite, []).append(r.passed)
        assert all(by_suite["dp-ratio"])
        assert not any(by_suite["noise-audit"])

    def test_dp_ratio_uses_two_point_support(self):
        results = run_verify(["dp-ratio"])
        assert len(results) == 4
        assert all(r.passed for r in results)
        assert results[0].detail.endswith("vs 4.8159")

    def test_cov_sensitivity_sizes_reach_fifty(self, monkeypatch):
        calls = []

        class RecordingRng:
            def __init__(self, inner):
                self.inner = inner

            def integers(self, low, high=None, *args, **kwargs):
                calls.append((low, high))
                return self.inner.integers(low, high, *args, **kwargs)

            def __getattr__(self, name):
                return getattr(self.inner, name)

        monkeypatch.setattr(harness, "VERIFY_COV_TRIALS", 20)
        (result,) = harness._cov_sensitivity_suite(RecordingRng(np.random.default_rng(0)), 1.0)
        assert result.passed
        assert (5, 51) in calls

    @pytest.mark.slow
    def test_all_suites_pass(self):
        results = run_verify()
        assert {r.suite for r in results} == {"calibration", "dp-ratio", "cov-sensitivity", "are", "noise-audit"}
        assert all(r.passed for r in results)

    def test_unknown_suite(self):
        with pytest.raises(ConfigurationError):
            run_verify(["speed"])
