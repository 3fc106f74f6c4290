"""
Tests for the gkin command line: exit codes and the files a run leaves behind.
"""
import json
import os
import pytest
from unittest.mock import patch

from src.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, build_parser, main
from src.experiments import ExperimentResult
from src.solver import NonContractiveError


def _fake_result(passed: bool = True) -> ExperimentResult:
    result = ExperimentResult("grazing")
    result.check("grazing.verdict.p2.0", "verdict", "CONVERGENT", "CONVERGENT", None, True)
    result.check("grazing.verdict.p3.0", "verdict", "DIVERGENT" if passed else "CONVERGENT", "DIVERGENT", None, passed)
    result.tables["grazing"] = [
        {"p": 2.0, "epsilon": 0.0625, "value": 0.1, "fitted_model": "", "verdict": "CONVERGENT"},
        {"p": 3.0, "epsilon": 0.0625, "value": 0.25, "fitted_model": "log", "verdict": "DIVERGENT"},
    ]
    result.results = {"limit": float("nan")}
    return result


class TestParser:
    """Argument parsing."""

    def test_counterexample_needs_kind(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["counterexample", "--config", "x.json"])

    def test_config_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["grazing"])

    def test_defaults(self):
        args = build_parser().parse_args(["counterexample", "ball", "--config", "x.json", "--workers", "2"])
        assert args.kind == "ball"
        assert args.workers == 2
        assert args.out is None


class TestMain:
    """End-to-end behavior of main()."""

    def test_missing_config(self, output_dir, capsys):
        code = main(["grazing", "--config", os.path.join(output_dir, "missing.json"), "--out", output_dir])
        assert code == EXIT_CONFIG
        assert "Config error" in capsys.readouterr().err

    def test_invalid_config(self, output_dir, capsys):
        path = os.path.join(output_dir, "bad.json")
        with open(path, "w") as f:
            json.dump({"domain": {"kind": "ball", "r": -1.0}}, f)
        assert main(["grazing", "--config", path, "--out", output_dir]) == EXIT_CONFIG
        assert "domain" in capsys.readouterr().err

    def test_counterexample_mismatch(self, config_file, output_dir):
        assert main(["counterexample", "flat", "--config", config_file, "--out", output_dir]) == EXIT_CONFIG

    def test_success_writes_outputs(self, config_file, output_dir, capsys):
        with patch("src.cli.run_experiment", return_value=_fake_result()):
            code = main(["grazing", "--config", config_file, "--out", output_dir])
        assert code == EXIT_OK
        assert "2/2 checks passed" in capsys.readouterr().out

        with open(os.path.join(output_dir, "ball_test.summary.json")) as f:
            summary = json.load(f)
        assert summary["passed"] is True
        assert summary["failures"] == []
        assert summary["artifacts"] == ["ball_test.grazing.csv"]
        assert summary["results"]["limit"] == "nan"
        assert summary["config"]["domain"]["r"] == 0.5

        with open(os.path.join(output_dir, "ball_test.grazing.csv"), "rb") as f:
            csv = f.read().decode()
        assert "\r\n" not in csv
        assert "0.10000000000000001" in csv
        assert os.path.exists(os.path.join(output_dir, "ball_test.metrics.prom"))

    def test_failed_check(self, config_file, output_dir, capsys):
        with patch("src.cli.run_experiment", return_value=_fake_result(passed=False)):
            code = main(["grazing", "--config", config_file, "--out", output_dir])
        assert code == EXIT_FAILED
        out = capsys.readouterr().out
        assert "[FAIL] grazing.verdict.p3.0" in out
        with open(os.path.join(output_dir, "ball_test.summary.json")) as f:
            assert json.load(f)["failures"] == ["grazing.verdict.p3.0"]

    def test_solver_failure(self, config_file, output_dir):
        with patch("src.cli.run_experiment", side_effect=NonContractiveError("ratio above 1")):
            code = main(["solve", "--config", config_file, "--out", output_dir])
        assert code == EXIT_FAILED
        with open(os.path.join(output_dir, "ball_test.summary.json")) as f:
            summary = json.load(f)
        assert summary["failures"] == ["solve.completed"]
        with open(os.path.join(output_dir, "ball_test.metrics.prom")) as f:
            assert 'gkin_solver_errors_total{error_type="NonContractiveError"} 1.0' in f.read()

    def test_real_eta_gap_run(self, config_file, output_dir):
        assert main(["eta-gap", "--config", config_file, "--out", output_dir]) == EXIT_OK
        with open(os.path.join(output_dir, "ball_test.metrics.prom")) as f:
            assert "gkin_eta_certified" in f.read()
