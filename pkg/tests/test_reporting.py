"""
Tests for the summary, CSV and console reporting.
"""
import json
import os
import numpy as np

from src.experiments import ExperimentResult
from src.reporting import print_summary, to_plain, write_summary, write_tables


class TestToPlain:
    """JSON-native conversion."""

    def test_numpy_values(self):
        value = to_plain({"a": np.float64(1.5), "b": np.int64(3), "c": np.bool_(True), "d": np.arange(3)})
        assert value == {"a": 1.5, "b": 3, "c": True, "d": [0, 1, 2]}
        assert type(value["b"]) is int

    def test_non_finite(self):
        assert to_plain([float("inf"), -np.inf, np.nan]) == ["inf", "-inf", "nan"]

    def test_tuples_and_keys(self):
        assert to_plain({1: (0.5, "x")}) == {"1": [0.5, "x"]}


class TestWriters:
    """Files in the output directory."""

    def test_tables(self, output_dir):
        tables = {"b_scan": [{"epsilon": 0.5, "value": 1.0 / 3.0}], "a_scan": [{"k": 1}], "empty": []}
        names = write_tables(tables, output_dir, "run")
        assert names == ["run.a_scan.csv", "run.b_scan.csv"]
        with open(os.path.join(output_dir, "run.b_scan.csv")) as f:
            lines = f.read().splitlines()
        assert lines[0] == "epsilon,value"
        assert lines[1] == "0.5,0.33333333333333331"

    def test_summary_without_config(self, output_dir):
        result = ExperimentResult("verify-kernel")
        result.check("nu.origin", "nu(0)", np.float64(0.7071), 0.7071, 1e-10, True)
        path = write_summary(result, None, output_dir, "run", ["z.csv", "a.csv"])
        with open(path) as f:
            text = f.read()
        assert text.endswith("}\n")
        summary = json.loads(text)
        assert summary["config"] is None
        assert summary["artifacts"] == ["a.csv", "z.csv"]
        assert summary["subcommand"] == "verify-kernel"
        assert summary["passed"] is True


class TestConsole:
    """Printed check summary."""

    def test_print(self, capsys):
        result = ExperimentResult("grazing")
        result.check("ok", "fine", 0.25, 0.25, None, True)
        result.check("bad", "broken", 2.0, 1.0, 0.5, False)
        print_summary(result, "demo")
        out = capsys.readouterr().out
        assert "=" * 60 in out
        assert "[PASS] ok: 0.25" in out
        assert "[FAIL] bad: 2" in out
        assert "expected 1 (tolerance 0.5)" in out
        assert "1/2 checks passed" in out
