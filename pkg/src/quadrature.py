"""
Quadrature Helpers
Gauss-Legendre rules, composite and dyadic panels, and local orthonormal frames.
"""
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(order: int, a: float = -1.0, b: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [a, b]."""
    nodes, weights = _leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


def composite_gauss(edges: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenate an order-point Gauss rule on every panel [edges[i], edges[i+1]]."""
    edges = np.asarray(edges, dtype=float)
    nodes, weights = _leggauss(order)
    lo = edges[:-1, None]
    half = 0.5 * (edges[1:, None] - lo)
    return (lo + half * (nodes + 1.0)).ravel(), (half * weights).ravel()


def dyadic_edges(lower: float, upper: float, levels: int) -> np.ndarray:
    """Panel edges [lower, upper·2^-levels, ..., upper/2, upper] graded toward lower."""
    inner = upper * 2.0 ** -np.arange(levels, 0, -1, dtype=float)
    inner = inner[inner > lower]
    return np.concatenate([[lower], inner, [upper]])


def orthonormal_frame(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing n (unit, shape (..., 3)) to a right-handed frame."""
    n = np.asarray(n, dtype=float)
    helper = np.zeros_like(n)
    use_e1 = np.abs(n[..., 0]) < 0.9
    helper[..., 0] = np.where(use_e1, 1.0, 0.0)
    helper[..., 1] = np.where(use_e1, 0.0, 1.0)
    e_a = np.cross(n, helper)
    e_a /= np.linalg.norm(e_a, axis=-1, keepdims=True)
    e_b = np.cross(n, e_a)
    return e_a, e_b


def spherical_directions(axis: np.ndarray, t: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Unit vectors with cosine t to axis and azimuth phi about it; broadcasts t, phi."""
    e_a, e_b = orthonormal_frame(axis)
    t = np.asarray(t, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    return t * axis + s * (np.cos(phi) * e_a + np.sin(phi) * e_b)
