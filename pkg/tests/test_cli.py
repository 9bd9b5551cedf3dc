"""
Tests for the command-line entry point and its exit codes
"""
import csv
import math

import pytest

from src.main import EXIT_CONFIG, EXIT_OK, EXIT_PRIVACY_GATE, EXIT_RUNTIME, main


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


class TestSamplers:
    def test_private_sgld(self, tmp_path, capsys):
        ledger = tmp_path / "ledger.csv"
        trace = tmp_path / "trace.csv"
        code = main([
            "sgld", "--data", "synthetic:two-normals:n=1000", "--epsilon", "1", "--delta", "1e-4",
            "--tau", "10", "--passes", "50", "--trace-out", str(trace), "--ledger-out", str(ledger),
        ])
        assert code == EXIT_OK
        assert "Privacy ledger" in capsys.readouterr().out
        rows = read_rows(ledger)
        assert [(r["event_label"], float(r["epsilon"]), float(r["delta"])) for r in rows] == [("dp-sgld", 1.0, 1e-4)]
        trace_rows = read_rows(trace)
        assert len(trace_rows) == 5000
        assert list(trace_rows[0].keys())[:4] == ["t", "phase", "eta", "noise_var"]

    def test_t_condition_refusal(self, capsys):
        code = main([
            "sgld", "--data", "synthetic:two-normals:n=1000000", "--epsilon", "4",
            "--passes", "1", "--tau", "10",
        ])
        assert code == EXIT_PRIVACY_GATE
        assert "T-condition" in capsys.readouterr().out

    def test_non_private_sghmc(self, tmp_path):
        out = tmp_path / "samples.csv"
        code = main([
            "sghmc", "--data", "synthetic:two-normals:n=200", "--passes", "5", "--eta0", "1e-3",
            "--friction", "0.5", "--out", str(out),
        ])
        assert code == EXIT_OK
        assert read_rows(out)

    def test_non_private_sgfs_skips_privacy_gate(self):
        code = main([
            "sgfs", "--data", "synthetic:two-normals:n=200", "--tau", "5", "--passes", "0.1", "--delta", "0.5",
        ])
        assert code == EXIT_OK

    def test_private_sgfs_short_run_refused(self):
        code = main([
            "sgfs", "--data", "synthetic:two-normals:n=1000000", "--epsilon", "4", "--tau", "10", "--passes", "1",
        ])
        assert code == EXIT_PRIVACY_GATE

    def test_sgnht_friction_gate(self):
        code = main([
            "sgnht", "--data", "synthetic:two-normals:n=200", "--epsilon", "1", "--passes", "2",
            "--eta0", "0.5", "--friction", "1e-6",
        ])
        assert code == EXIT_PRIVACY_GATE


class TestReleases:
    def test_ops(self, tmp_path):
        ledger = tmp_path / "ledger.csv"
        code = main([
            "ops", "--data", "synthetic:two-normals:n=200", "--epsilon", "1",
            "--chain-length", "200", "--ledger-out", str(ledger),
        ])
        assert code == EXIT_OK
        assert [r["event_label"] for r in read_rows(ledger)] == ["ops"]

    def test_ops_trace_charges_approximation_gap(self, tmp_path):
        ledger = tmp_path / "ledger.csv"
        code = main([
            "ops", "--data", "synthetic:two-normals:n=100", "--epsilon", "1", "--l1-gap", "0.01",
            "--chain-length", "50", "--trace-out", str(tmp_path / "chain.csv"), "--ledger-out", str(ledger),
        ])
        assert code == EXIT_OK
        (row,) = read_rows(ledger)
        assert float(row["delta"]) == pytest.approx((1 + math.e) * 0.01)

    def test_ops_trace_without_gap_is_pure(self, tmp_path):
        ledger = tmp_path / "ledger.csv"
        code = main([
            "ops", "--data", "synthetic:two-normals:n=100", "--epsilon", "1", "--chain-length", "50",
            "--trace-out", str(tmp_path / "chain.csv"), "--ledger-out", str(ledger),
        ])
        assert code == EXIT_OK
        assert float(read_rows(ledger)[0]["delta"]) == 0.0

    def test_ops_takes_no_delta(self):
        assert main(["ops", "--epsilon", "1", "--delta", "1e-4"]) == EXIT_CONFIG

    def test_hybrid_ledger(self, tmp_path):
        ledger = tmp_path / "ledger.csv"
        code = main([
            "hybrid", "--data", "synthetic:two-normals:n=200", "--epsilon", "2", "--passes", "1",
            "--chain-length", "200", "--ledger-out", str(ledger),
        ])
        assert code == EXIT_OK
        rows = read_rows(ledger)
        assert [r["event_label"] for r in rows] == ["hybrid/ops", "hybrid/dp-sgld"]
        assert float(rows[-1]["cumulative_epsilon"]) == pytest.approx(2.0)

    def test_objpert(self, tmp_path):
        out = tmp_path / "theta.csv"
        code = main(["objpert", "--data", "synthetic:two-normals:n=200", "--epsilon", "0.5", "--out", str(out)])
        assert code == EXIT_OK
        assert list(read_rows(out)[0].keys()) == ["theta_0", "theta_1"]

    def test_outpert_epsilon_range(self):
        code = main(["outpert", "--data", "synthetic:two-normals:n=200", "--epsilon", "2"])
        assert code == EXIT_CONFIG


class TestConfigErrors:
    @pytest.mark.parametrize("argv", [
        ["sgld", "--no-such-flag"],
        ["teleport"],
        [],
        ["sgld", "--epsilon", "-1"],
        ["sgld", "--delta", "1.5", "--epsilon", "1"],
        ["sgld", "--data", "parquet:x.pq"],
        ["sgld", "--alpha", "0.5"],
        ["bench", "--eps", "1,x", "--out", "r.csv"],
        ["bench", "--eps", "1", "--methods", "laplace", "--out", "r.csv"],
    ])
    def test_exit_two(self, argv):
        assert main(argv) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert main(["ops", "--epsilon", "1", "--data", f"csv:{tmp_path / 'none.csv'}"]) == EXIT_CONFIG

    def test_malformed_file(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("1,0,1\n1,oops,-1\n", encoding="utf-8")
        assert main(["objpert", "--epsilon", "0.5", "--data", f"csv:{path}"]) == EXIT_CONFIG
        assert "line 2" in capsys.readouterr().out


class TestBenchAndVerify:
    def test_bench_row_count(self, tmp_path):
        out = tmp_path / "results.csv"
        code = main([
            "bench", "--data", "synthetic:two-normals:n=200", "--eps", "0.1,1,10", "--delta", "1e-4",
            "--seeds", "2", "--methods", "objpert,non_private_erm", "--out", str(out),
        ])
        assert code == EXIT_OK
        assert len(read_rows(out)) == 3 * 2 * 2
        assert (tmp_path / "results_summary.csv").exists()
        assert (tmp_path / "results_meta.json").exists()

    def test_verify_suite(self, capsys):
        assert main(["verify", "--suite", "calibration", "--suite", "noise-audit"]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_verify_reports_failure(self):
        assert main(["verify", "--suite", "noise-audit", "--tamper-noise", "0.25"]) == EXIT_RUNTIME
