"""
Shared test fixtures for the kinetic transport verification toolkit.
"""
import os
import sys
import json
import tempfile
import pytest
import numpy as np

# Ensure src is importable
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


@pytest.fixture
def unit_ball():
    """Ball of radius 1."""
    from src.geometry import Ball
    return Ball(1.0)


@pytest.fixture
def small_ball():
    """Ball of radius 1/2, the default experiment domain."""
    from src.geometry import Ball
    return Ball(0.5)


@pytest.fixture
def flat_cap():
    """Flat-capped ball R = 1, a = 1/4 with cutoff radius r1 = 1/2."""
    from src.geometry import FlatCap
    return FlatCap(1.0, 0.25, 0.5)


@pytest.fixture
def hard_sphere():
    """Hard-sphere collision model with rho = 1/2."""
    from src.collision import HardSphere
    return HardSphere(rho=0.5)


@pytest.fixture
def coarse_quad():
    """Velocity quadrature coarse enough for unit tests."""
    from src.collision import VelocityQuadrature
    return VelocityQuadrature(v_max=6.0, n_r=16, n_theta=8, n_phi=8)


@pytest.fixture
def rng():
    """Seeded generator so sampled checks are reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def ball_config_dict():
    """Small ball experiment document."""
    return {
        "name": "ball_test",
        "seed": 11,
        "domain": {"kind": "ball", "r": 0.5},
        "kernel": {"rho": 0.5},
        "quad": {"v_max": 6.0, "n_r": 16, "n_theta": 8, "n_phi": 8},
        "boundary_data": {"kind": "cap_cutoff", "theta1": 0.3, "theta2": 0.6},
        "solver": {"grid": {"n_x": 4, "n_v_r": 3, "n_v_ang": 4}, "mc_paths": 500, "n_probes": 2},
        "norms": [{"p": 2.0, "alpha": 0.1}],
        "scan": {"p_values": [2.0, 3.0], "k_min": 4, "k_max": 10, "mc_samples": 1000},
        "eta_gap": {"r0": 0.1, "n_radial": 3, "n_angle": 3},
    }


@pytest.fixture
def flat_config_dict():
    """Small flat-cap experiment document (boundary data left to its default)."""
    return {
        "name": "flat_test",
        "domain": {"kind": "flat_cap", "R": 1.0, "a": 0.25, "r1": 0.5},
        "quad": {"v_max": 6.0, "n_r": 16, "n_theta": 8, "n_phi": 8},
        "scan": {"p_values": [1.5, 2.0], "k_min": 4, "k_max": 10},
    }


@pytest.fixture
def ball_config(ball_config_dict):
    """Validated ExperimentConfig for the small ball."""
    from src.config import parse_config
    return parse_config(ball_config_dict)


@pytest.fixture
def config_file(ball_config_dict):
    """The ball document written to a temporary JSON file."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = os.path.join(tmpdir, "ball.json")
        with open(path, "w") as f:
            json.dump(ball_config_dict, f)
        yield path


@pytest.fixture
def output_dir():
    """Temporary output directory for report files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir
