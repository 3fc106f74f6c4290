"""
Kinetic Transport Verification Toolkit - Source Package
Geometry, collision and transport operators for the linearized Boltzmann equation
"""
from .config import ConfigError, ExperimentConfig, load_config, parse_config, settings
from .logging_config import get_logger, new_run_id, setup_logging, timed

__version__ = "0.1.0"

__all__ = [
    "settings",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "setup_logging",
    "get_logger",
    "new_run_id",
    "timed",
]
