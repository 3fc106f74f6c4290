"""
Tests for run metrics and the logging helpers.
"""
import os
import pytest

from src.logging_config import get_correlation_id, new_run_id, timed
from src.monitoring import RunMetrics


class TestRunMetrics:
    """Per-run Prometheus registry."""

    def test_check_counters(self):
        metrics = RunMetrics()
        metrics.record_check("grazing", True)
        metrics.record_check("grazing", False)
        text = metrics.get_metrics().decode()
        assert 'gkin_checks_total{subcommand="grazing"} 2.0' in text
        assert 'gkin_checks_failed_total{subcommand="grazing"} 1.0' in text

    def test_registries_are_independent(self):
        first, second = RunMetrics(), RunMetrics()
        first.record_mc(100)
        assert "gkin_mc_paths_total 100.0" in first.get_metrics().decode()
        assert "gkin_mc_paths_total 0.0" in second.get_metrics().decode()

    def test_solve_and_gauges(self):
        metrics = RunMetrics()
        metrics.record_solve(7, 0.25)
        metrics.update_eta(0.3)
        metrics.record_error("GridResolutionError")
        text = metrics.get_metrics().decode()
        assert "gkin_neumann_iterations_total 7.0" in text
        assert "gkin_contraction_ratio 0.25" in text
        assert "gkin_eta_certified 0.3" in text
        assert 'gkin_solver_errors_total{error_type="GridResolutionError"} 1.0' in text

    def test_duration_histogram(self):
        metrics = RunMetrics()
        metrics.record_duration("solve", 2.0)
        text = metrics.get_metrics().decode()
        assert 'gkin_experiment_duration_seconds_count{subcommand="solve"} 1.0' in text

    def test_write(self, output_dir):
        metrics = RunMetrics()
        metrics.record_check("eta-gap", True)
        path = metrics.write(os.path.join(output_dir, "nested"), "run")
        assert path.endswith("run.metrics.prom")
        with open(path) as f:
            assert 'gkin_checks_total{subcommand="eta-gap"} 1.0' in f.read()


class TestLogging:
    """Correlation ids and the timing decorator."""

    def test_new_run_id(self):
        first = new_run_id()
        assert get_correlation_id() == first
        second = new_run_id()
        assert second != first
        assert get_correlation_id() == second

    def test_timed_returns_result(self):
        @timed(name="test.add")
        def add(a, b):
            return a + b

        assert add(2, 3) == 5

    def test_timed_reraises(self):
        @timed
        def broken():
            raise RuntimeError("boom")

        with pytest.raises(RuntimeError, match="boom"):
            broken()
