"""
Command Line Interface
gkin <subcommand> --config path.json [--workers N] [--out dir]

Usage:
    python -m src.cli grazing --config configs/ball.json
    python -m src.cli counterexample flat --config configs/flat_cap.json
"""
import argparse
import sys
import time
from typing import List, Optional

from .config import ConfigError, ExperimentConfig, load_config, settings
from .experiments import SUBCOMMANDS, ExperimentResult, run_experiment
from .logging_config import get_logger, new_run_id
from .monitoring import RunMetrics
from .reporting import print_summary, write_report

log = get_logger("cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gkin",
        description="Numerical verification of linearized Boltzmann transport estimates",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name)
        if name == "counterexample":
            cmd.add_argument("kind", choices=["flat", "ball"], help="Domain of the counterexample")
        cmd.add_argument("--config", required=True, help="Experiment config (JSON)")
        cmd.add_argument("--workers", type=int, default=settings.workers,
                         help="Worker threads (0 = one per logical core)")
        cmd.add_argument("--out", default=None, help="Output directory")
    return parser


def _print_config_error(error: ConfigError):
    print(f"Config error: {error}", file=sys.stderr)
    for item in error.errors:
        print(f"  {item['loc']}: {item['msg']}", file=sys.stderr)


def _record(metrics: RunMetrics, result: ExperimentResult):
    for check in result.checks:
        metrics.record_check(result.subcommand, check["passed"])
    counters = result.counters
    if counters.get("iterations"):
        metrics.record_solve(counters["iterations"], counters.get("contraction_ratio"))
    elif "contraction_ratio" in counters:
        metrics.contraction_ratio.set(counters["contraction_ratio"])
    if counters.get("mc_paths"):
        metrics.record_mc(counters["mc_paths"])
    for error_type in counters.get("errors", []):
        metrics.record_error(error_type)
    if "eta_certified" in counters:
        metrics.update_eta(counters["eta_certified"])


def execute(subcommand: str, cfg: ExperimentConfig, workers: int, out_dir: str, kind: Optional[str] = None) -> int:
    """Run one subcommand, write its report and metrics, and return the exit code."""
    metrics = RunMetrics()
    label = f"counterexample-{kind}" if subcommand == "counterexample" else subcommand
    start = time.perf_counter()
    try:
        result = run_experiment(subcommand, cfg, workers, kind)
    except RuntimeError as e:
        log.error(f"{label} aborted: {type(e).__name__}: {e}")
        result = ExperimentResult(label)
        result.check(f"{subcommand}.completed", "subcommand ran to completion", type(e).__name__, "completed", None, False)
        result.counters["errors"] = [type(e).__name__]
    metrics.record_duration(result.subcommand, time.perf_counter() - start)
    _record(metrics, result)

    write_report(result, cfg, out_dir, cfg.name)
    metrics.write(out_dir, cfg.name)
    print_summary(result, cfg.name)
    if result.passed:
        log.info(f"{label}: all {len(result.checks)} checks passed")
        return EXIT_OK
    log.warning(f"{label}: {len(result.failures)} of {len(result.checks)} checks failed")
    return EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point."""
    args = build_parser().parse_args(argv)
    run_id = new_run_id()
    log.info(f"gkin {args.subcommand} run {run_id}")
    try:
        cfg = load_config(args.config)
        out_dir = args.out or cfg.output_dir or settings.output_dir
        return execute(args.subcommand, cfg, args.workers, out_dir, getattr(args, "kind", None))
    except ConfigError as e:
        _print_config_error(e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
