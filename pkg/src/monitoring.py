"""
Prometheus Metrics & Monitoring Helpers
Per-run metrics registry for verification runs, written as a Prometheus text file.
"""
import os

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Histogram,
    Gauge,
    generate_latest,
    write_to_textfile,
)


class RunMetrics:
    """Counters, histograms and gauges for one CLI run.

    A fresh CollectorRegistry per run keeps repeated runs in one process
    (tests, notebooks) from accumulating into each other.
    """

    def __init__(self):
        self.registry = CollectorRegistry()

        # --- Counters ---
        self.checks_run = Counter(
            "gkin_checks_total",
            "Verification checks evaluated",
            ["subcommand"],
            registry=self.registry,
        )
        self.checks_failed = Counter(
            "gkin_checks_failed_total",
            "Verification checks that failed",
            ["subcommand"],
            registry=self.registry,
        )
        self.neumann_iterations = Counter(
            "gkin_neumann_iterations_total",
            "Neumann series terms computed",
            registry=self.registry,
        )
        self.mc_paths = Counter(
            "gkin_mc_paths_total",
            "Monte Carlo backward paths simulated",
            registry=self.registry,
        )
        self.solver_errors = Counter(
            "gkin_solver_errors_total",
            "Solver failures by type",
            ["error_type"],
            registry=self.registry,
        )

        # --- Histograms ---
        self.experiment_duration = Histogram(
            "gkin_experiment_duration_seconds",
            "Wall time of a subcommand",
            ["subcommand"],
            buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 180.0, 300.0],
            registry=self.registry,
        )

        # --- Gauges ---
        self.contraction_ratio = Gauge(
            "gkin_contraction_ratio",
            "Last measured Neumann increment ratio",
            registry=self.registry,
        )
        self.eta_certified = Gauge(
            "gkin_eta_certified",
            "Certified lower bound of the eta gap",
            registry=self.registry,
        )

    def record_check(self, subcommand: str, passed: bool):
        """Record one verification check."""
        self.checks_run.labels(subcommand=subcommand).inc()
        if not passed:
            self.checks_failed.labels(subcommand=subcommand).inc()

    def record_duration(self, subcommand: str, duration: float):
        """Record the wall time of a subcommand."""
        self.experiment_duration.labels(subcommand=subcommand).observe(duration)

    def record_solve(self, iterations: int, ratio: float = None):
        """Record a Neumann solve."""
        self.neumann_iterations.inc(iterations)
        if ratio is not None:
            self.contraction_ratio.set(ratio)

    def record_mc(self, n_paths: int):
        """Record simulated Monte Carlo paths."""
        self.mc_paths.inc(n_paths)

    def record_error(self, error_type: str):
        """Record a solver failure."""
        self.solver_errors.labels(error_type=error_type).inc()

    def update_eta(self, value: float):
        """Update the certified eta gauge."""
        self.eta_certified.set(value)

    def get_metrics(self) -> bytes:
        """Generate Prometheus-format metrics output."""
        return generate_latest(self.registry)

    def write(self, output_dir: str, name: str) -> str:
        """Write the registry to <output_dir>/<name>.metrics.prom and return the path."""
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, f"{name}.metrics.prom")
        write_to_textfile(path, self.registry)
        return path
