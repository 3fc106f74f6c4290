"""
Collocation Grids
Tensor grids over the domain (mapped coordinates) and over the velocity ball, with
cell volumes and multilinear interpolation stencils.
"""
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .geometry import ConvexDomain


def _axis_stencil(nodes: np.ndarray, coords: np.ndarray, periodic: bool):
    """Lower index, upper index and upper weight along one axis."""
    n = nodes.size
    if periodic:
        step = 2.0 * math.pi / n
        u = coords / step - 0.5
        base = np.floor(u)
        t = u - base
        lo = np.mod(base.astype(np.int64), n)
        return lo, np.mod(lo + 1, n), t
    lo = np.clip(np.searchsorted(nodes, coords, side="right") - 1, 0, n - 2)
    t = np.clip((coords - nodes[lo]) / (nodes[lo + 1] - nodes[lo]), 0.0, 1.0)
    return lo, lo + 1, t


def multilinear_stencil(axes: Sequence[np.ndarray], periodic: Sequence[bool], coords: np.ndarray):
    """Flat grid indices and weights, shape (..., 8), of trilinear interpolation at coords (..., 3)."""
    shape = tuple(a.size for a in axes)
    parts = [_axis_stencil(a, coords[..., k], p) for k, (a, p) in enumerate(zip(axes, periodic))]
    index = np.zeros(coords.shape[:-1] + (8,), dtype=np.int64)
    weight = np.ones(coords.shape[:-1] + (8,))
    for corner in range(8):
        flat = np.zeros(coords.shape[:-1], dtype=np.int64)
        w = np.ones(coords.shape[:-1])
        for k, (lo, hi, t) in enumerate(parts):
            upper = (corner >> (2 - k)) & 1
            flat = flat * shape[k] + (hi if upper else lo)
            w = w * (t if upper else 1.0 - t)
        index[..., corner] = flat
        weight[..., corner] = w
    return index, weight


@dataclass
class XGrid:
    """Collocation nodes strictly inside the domain, in the domain's mapped coordinates."""

    dom: ConvexDomain
    n: int
    axes: Tuple[np.ndarray, np.ndarray, np.ndarray] = field(init=False)
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.axes = self.dom.collocation_axes(self.n)
        mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, 3)
        self.nodes = self.dom.from_grid_coordinates(mesh)
        self.weights = self.dom.collocation_weights(self.axes).ravel()

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def stencil(self, x: np.ndarray):
        return multilinear_stencil(self.axes, (False, False, True), self.dom.to_grid_coordinates(x))


@dataclass
class VGrid:
    """Spherical product grid on |v| <= v_max, polar axis e1; speeds graded toward 0."""

    v_max: float
    n_r: int
    n_ang: int
    axes: Tuple[np.ndarray, np.ndarray, np.ndarray] = field(init=False)
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        speeds = self.v_max * ((np.arange(self.n_r) + 0.5) / self.n_r) ** 2
        n_polar = max(2, self.n_ang // 2)
        polar = math.pi * (np.arange(n_polar) + 0.5) / n_polar
        azimuth = 2.0 * math.pi * (np.arange(self.n_ang) + 0.5) / self.n_ang
        self.axes = (speeds, polar, azimuth)
        rr, tt, pp = np.meshgrid(*self.axes, indexing="ij")
        s = np.sin(tt)
        self.nodes = np.stack([rr * np.cos(tt), rr * s * np.cos(pp), rr * s * np.sin(pp)], axis=-1).reshape(-1, 3)
        r_edges = np.concatenate([[0.0], 0.5 * (speeds[1:] + speeds[:-1]), [self.v_max]])
        t_edges = np.concatenate([[0.0], 0.5 * (polar[1:] + polar[:-1]), [math.pi]])
        w = (np.diff(r_edges ** 3) / 3.0)[:, None, None] * (-np.diff(np.cos(t_edges)))[None, :, None]
        self.weights = (w * np.full(self.n_ang, 2.0 * math.pi / self.n_ang)[None, None, :]).ravel()

    @classmethod
    def from_spec(cls, spec, v_max: float) -> "VGrid":
        return cls(v_max, spec.n_v_r, spec.n_v_ang)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def speeds(self) -> np.ndarray:
        return np.sqrt(np.sum(self.nodes ** 2, axis=-1))

    def coordinates(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        speed = np.sqrt(np.sum(v * v, axis=-1))
        safe = np.where(speed > 0.0, speed, 1.0)
        theta = np.arccos(np.clip(v[..., 0] / safe, -1.0, 1.0))
        phi = np.mod(np.arctan2(v[..., 2], v[..., 1]), 2.0 * math.pi)
        return np.stack([speed, theta, phi], axis=-1)

    def stencil(self, v: np.ndarray):
        """Interpolation stencil in v; weights vanish for |v| > v_max."""
        c = self.coordinates(v)
        index, weight = multilinear_stencil(self.axes, (False, False, True), c)
        weight = np.where((c[..., 0] <= self.v_max)[..., None], weight, 0.0)
        return index, weight
