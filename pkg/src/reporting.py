"""
Run Reporting
Writes the summary JSON and scan CSVs of a verification run and prints the console summary.
"""
import json
import math
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .logging_config import get_logger

log = get_logger("reporting")

CSV_FLOAT_FORMAT = "%.17g"


def to_plain(value):
    """Recursively convert numpy scalars/arrays and tuples into JSON-native values."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # JSON has no inf/nan literals
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_tables(tables: Dict[str, List[Dict]], out_dir: str, name: str) -> List[str]:
    """Write each scan table to <out_dir>/<name>.<scan>.csv; returns the file names."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []
    for scan, rows in sorted(tables.items()):
        if not rows:
            continue
        filename = f"{name}.{scan}.csv"
        frame = pd.DataFrame([to_plain(row) for row in rows])
        frame.to_csv(
            os.path.join(out_dir, filename),
            index=False,
            float_format=CSV_FLOAT_FORMAT,
            lineterminator="\n",
        )
        artifacts.append(filename)
    return artifacts


def write_summary(
    result,
    cfg: Optional[ExperimentConfig],
    out_dir: str,
    name: str,
    artifacts: Optional[List[str]] = None,
) -> str:
    """Write <out_dir>/<name>.summary.json. Keys are sorted and no timestamps are stored,
    so identical runs produce identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "name": name,
        "subcommand": result.subcommand,
        "config": cfg.model_dump(mode="json") if cfg is not None else None,
        "checks": result.checks,
        "failures": [c["tag"] for c in result.failures],
        "passed": result.passed,
        "artifacts": sorted(artifacts or []),
        "results": result.results,
    }
    path = os.path.join(out_dir, f"{name}.summary.json")
    with open(path, "w") as f:
        json.dump(to_plain(summary), f, indent=2, sort_keys=True)
        f.write("\n")
    log.info(f"Summary written to {path}")
    return path


def write_report(result, cfg: ExperimentConfig, out_dir: str, name: str) -> str:
    """CSV tables first, then the summary that lists them."""
    artifacts = write_tables(result.tables, out_dir, name)
    return write_summary(result, cfg, out_dir, name, artifacts)


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    return str(value)


def print_summary(result, name: str):
    """Pretty-print every check of a run."""
    print("\n" + "=" * 60)
    print(f"{result.subcommand} :: {name}")
    print("=" * 60)
    for check in result.checks:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"  [{status}] {check['tag']}: {_format(check['measured'])}")
        if not check["passed"]:
            print(f"         expected {_format(check['expected'])} (tolerance {_format(check['tolerance'])})")

    n_failed = len(result.failures)
    print(f"\n--- {len(result.checks) - n_failed}/{len(result.checks)} checks passed ---")
    print("=" * 60)
