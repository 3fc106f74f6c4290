"""
Tests for experiment results, dispatch and short end-to-end subcommand runs.
"""
import os
import pytest

from src.config import ConfigError, parse_config
from src.experiments import SUBCOMMANDS, ExperimentResult, counterexample, run_experiment
from src.reporting import write_report


def _passed(result, tag):
    return next(c for c in result.checks if c["tag"] == tag)["passed"]


class TestExperimentResult:
    """Check bookkeeping."""

    def test_check_records(self):
        result = ExperimentResult("grazing")
        assert result.check("a", "first", 1.0, 1.0, None, True)
        assert not result.check("b", "second", 2.0, 1.0, None, False)
        assert [c["tag"] for c in result.failures] == ["b"]
        assert not result.passed

    def test_close_absolute_and_relative(self):
        result = ExperimentResult("grazing")
        assert result.close("abs", "absolute", 1.05, 1.0, 0.1)
        assert not result.close("rel", "relative", 105.0, 100.0, 0.01, relative=True)
        assert result.close("rel2", "relative", 105.0, 100.0, 0.1, relative=True)

    def test_empty_result_passes(self):
        assert ExperimentResult("solve").passed

    def test_passed_is_plain_bool(self):
        result = ExperimentResult("grazing")
        result.check("t", "numpy bool", 0.0, 0.0, None, 1 == 1)
        assert result.checks[0]["passed"] is True


class TestDispatch:
    """run_experiment and the counterexample guard."""

    def test_subcommand_names(self):
        assert set(SUBCOMMANDS) == {
            "verify-kernel", "verify-geometry", "operator-norms", "change-of-variables",
            "grazing", "eta-gap", "counterexample", "solve",
        }

    def test_unknown_subcommand(self, ball_config):
        with pytest.raises(ValueError, match="unknown subcommand"):
            run_experiment("simulate", ball_config)

    def test_counterexample_domain_mismatch(self, ball_config):
        with pytest.raises(ConfigError, match="flat_cap domain"):
            counterexample(ball_config, kind="flat")

    def test_counterexample_kind(self, ball_config):
        with pytest.raises(ConfigError, match="flat or ball"):
            counterexample(ball_config, kind="cylinder")


class TestSubcommandRuns:
    """Small but complete runs on the test configs."""

    def test_eta_gap(self, ball_config):
        result = run_experiment("eta-gap", ball_config)
        assert result.subcommand == "eta-gap"
        assert _passed(result, "eta.limit")
        assert _passed(result, "eta.certified")
        assert result.counters["eta_certified"] > 0.0
        assert len(result.tables["eta_gap"]) == 9

    def test_verify_geometry_closed_forms(self, ball_config):
        result = run_experiment("verify-geometry", ball_config)
        for tag in ("ball.center_exit", "ball.offset_exit", "ball.footpoint", "ball.grazing_oblique",
                    "flat_cap.footpoint", "flat_cap.grad_x_tau", "ball.chord_length", "flat_cap.chord_unbounded"):
            assert _passed(result, tag), tag

    def test_verify_geometry_reproducible(self, ball_config, output_dir):
        texts = []
        for run in ("first", "second"):
            result = run_experiment("verify-geometry", ball_config)
            path = write_report(result, ball_config, os.path.join(output_dir, run), "geometry")
            with open(path, "rb") as f:
                texts.append(f.read())
        assert texts[0] == texts[1]

    def test_grazing_on_flat_cap(self, flat_config_dict):
        cfg = parse_config(flat_config_dict)
        result = run_experiment("grazing", cfg)
        rows = result.tables["grazing"]
        verdicts = {row["p"]: row["verdict"] for row in rows}
        assert verdicts[1.5] == "CONVERGENT"
        assert verdicts[2.0] == "DIVERGENT"
