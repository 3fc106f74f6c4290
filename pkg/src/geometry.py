"""
Convex Domains
Backward exit times, footpoints, outward normals and grazing factors for the ball and
the flat-capped ball, with the exit-time derivatives used by the transport operators.

All point/velocity arguments are arrays of shape (..., 3); results broadcast over the
leading axes.
"""
import math
from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from .logging_config import get_logger
from .quadrature import gauss_legendre

log = get_logger("geometry")

GRAZING_TOL = 1e-14
BISECTION_STEPS = 60
FD_STEP = 1e-6
INNER_SHELL = 0.995

SPHERE_FACE = 0
PLANE_FACE = 1


class GrazingSingularityError(ValueError):
    """The footpoint is grazing (N < GRAZING_TOL), so the exit-time gradient is infinite."""


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _norm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(_dot(a, a))


def _as_vec(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {a.shape}")
    return a


class ConvexDomain(ABC):
    """A bounded convex domain with an exactly computable backward exit time."""

    kind: str = ""

    @property
    @abstractmethod
    def diam(self) -> float:
        ...

    @property
    @abstractmethod
    def volume(self) -> float:
        ...

    @property
    @abstractmethod
    def surface_area(self) -> float:
        ...

    @abstractmethod
    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership of x in the open domain, enlarged by tol (a length)."""

    @abstractmethod
    def normal(self, z: np.ndarray) -> np.ndarray:
        """Outward unit normal at boundary points z."""

    @abstractmethod
    def _trace(self, x: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tau, footpoint, footpoint normal) without validation."""

    @abstractmethod
    def chord_bound(self) -> float:
        """C3 with |z - q(z,-v)| <= C3 N(z,v); +inf when no such constant exists."""

    @abstractmethod
    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        ...

    @abstractmethod
    def sample_boundary(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Uniform points on the boundary and their normals."""

    @abstractmethod
    def boundary_quadrature(self, order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(nodes, normals, area weights) of a deterministic surface rule."""

    @abstractmethod
    def to_grid_coordinates(self, x: np.ndarray) -> np.ndarray:
        """Map interior points to the unit-cube-like collocation coordinates."""

    @abstractmethod
    def from_grid_coordinates(self, c: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def collocation_axes(self, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Strictly interior node coordinates along the three collocation axes."""

    @abstractmethod
    def collocation_weights(self, axes) -> np.ndarray:
        """Cell volumes of the tensor grid built from collocation_axes."""

    # --- validated operations ---

    def _validate(self, x, v) -> Tuple[np.ndarray, np.ndarray]:
        x = _as_vec(x)
        v = _as_vec(v)
        if np.any(_norm(v) == 0.0):
            raise ValueError("velocity v = 0 has no exit time")
        if not np.all(self.contains(x, tol=1e-10 * self.diam)):
            raise ValueError("point outside the domain")
        return x, v

    def exit_time(self, x, v) -> np.ndarray:
        """tau(x, v) = inf{s > 0 : x - s v leaves the domain}."""
        x, v = self._validate(x, v)
        return self._trace(x, v)[0]

    def footpoint(self, x, v) -> Tuple[np.ndarray, np.ndarray]:
        """(tau, q) with q = x - tau v on the boundary."""
        x, v = self._validate(x, v)
        tau, q, _ = self._trace(x, v)
        return tau, q

    def footpoint_normal(self, x, v) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tau, q, n(q)) using the face hit by the backward ray."""
        x, v = self._validate(x, v)
        return self._trace(x, v)

    def grazing_factor(self, z, v) -> np.ndarray:
        """N(z, v) = |n(z) . v / |v||."""
        v = _as_vec(v)
        speed = _norm(v)
        if np.any(speed == 0.0):
            raise ValueError("velocity v = 0 has no grazing factor")
        return np.abs(_dot(self.normal(_as_vec(z)), v)) / speed

    def _footpoint_grazing(self, x, v):
        tau, q, n = self.footpoint_normal(x, v)
        speed = _norm(v)
        grazing = np.abs(_dot(n, v)) / speed
        if np.any(grazing < GRAZING_TOL):
            raise GrazingSingularityError("grazing footpoint: N(q(x,v), v) = 0")
        return tau, n, grazing, speed

    def grad_x_tau(self, x, v) -> np.ndarray:
        """grad_x tau = -n(q) / (N_- |v|)."""
        _, n, grazing, speed = self._footpoint_grazing(x, v)
        return -n / (grazing * speed)[..., None]

    def grad_v_tau(self, x, v) -> np.ndarray:
        """Exact grad_v tau = -tau n(q) / (n(q) . v)."""
        tau, n, grazing, speed = self._footpoint_grazing(x, v)
        return (tau / (grazing * speed))[..., None] * n

    def grad_v_tau_fd(self, x, v, step: float = None) -> np.ndarray:
        """Central finite differences of tau in v."""
        x, v = self._validate(x, v)
        h = FD_STEP * _norm(v) if step is None else np.full(v.shape[:-1], step)
        grad = np.empty(np.broadcast_shapes(x.shape, v.shape))
        for i in range(3):
            dv = np.zeros_like(v)
            dv[..., i] = h
            grad[..., i] = (self._trace(x, v + dv)[0] - self._trace(x, v - dv)[0]) / (2.0 * h)
        return grad

    def grad_v_tau_bound(self, x, v) -> np.ndarray:
        """|grad_x tau| tau, the bound on |grad_v tau| (attained for these domains)."""
        tau, _, grazing, speed = self._footpoint_grazing(x, v)
        return tau / (grazing * speed)

    def exit_time_bisect(self, x, v) -> np.ndarray:
        """Domain-agnostic bisection on s -> contains(x - s v) over [0, diam/|v|]."""
        x, v = self._validate(x, v)
        lo = np.zeros(np.broadcast_shapes(x.shape, v.shape)[:-1])
        hi = lo + self.diam / _norm(v)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            inside = self.contains(x - mid[..., None] * v)
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return 0.5 * (lo + hi)

    def chord_ratio(self, z, v) -> np.ndarray:
        """|z - q(z, -v)| / N(z, v) for incoming (z, v)."""
        v = _as_vec(v)
        tau = self.exit_time(z, -v)
        return tau * _norm(v) / self.grazing_factor(z, v)


class Ball(ConvexDomain):
    """Ball of radius r centered at the origin."""

    kind = "ball"

    def __init__(self, r: float):
        if not r > 0:
            raise ValueError(f"ball radius must be positive, got {r}")
        self.r = float(r)

    def __repr__(self) -> str:
        return f"Ball(r={self.r})"

    @property
    def diam(self) -> float:
        return 2.0 * self.r

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.r ** 3

    @property
    def surface_area(self) -> float:
        return 4.0 * math.pi * self.r ** 2

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return _dot(x, x) < (self.r + tol) ** 2

    def normal(self, z) -> np.ndarray:
        return z / _norm(z)[..., None]

    def _trace(self, x, v):
        speed = _norm(v)
        xv = _dot(x, v) / speed
        gap = np.clip(self.r ** 2 - _dot(x, x), 0.0, None)
        root = np.sqrt(gap + xv * xv)
        with np.errstate(divide="ignore", invalid="ignore"):
            # x.v^ + root cancels for backward-facing rays; use the conjugate form there
            length = np.where(xv >= 0.0, xv + root, gap / (root - xv))
        length = np.where(np.isfinite(length), length, 0.0)
        tau = length / speed
        q = x - tau[..., None] * v
        return tau, q, q / self.r

    def chord_bound(self) -> float:
        return 2.0 * self.r

    def polar_angle(self, z) -> np.ndarray:
        """Angle between z and the +x1 axis, the coordinate of the caps."""
        z = _as_vec(z)
        return np.arccos(np.clip(z[..., 0] / _norm(z), -1.0, 1.0))

    def sample_interior(self, rng, n):
        u = rng.standard_normal((n, 3))
        u /= _norm(u)[:, None]
        return self.r * rng.random(n)[:, None] ** (1.0 / 3.0) * u

    def sample_boundary(self, rng, n):
        u = rng.standard_normal((n, 3))
        u /= _norm(u)[:, None]
        return self.r * u, u

    def boundary_quadrature(self, order):
        return self.cap_quadrature(math.pi, order, 2 * order)

    def cap_quadrature(self, theta_max: float, n_theta: int, n_phi: int, split: float = None):
        """Surface rule on the cap {polar angle < theta_max}, optionally split at `split`."""
        edges = [math.cos(theta_max), 1.0] if split is None else [math.cos(theta_max), math.cos(split), 1.0]
        t_nodes, t_weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes, weights = gauss_legendre(n_theta, lo, hi)
            t_nodes.append(nodes)
            t_weights.append(weights)
        t = np.concatenate(t_nodes)
        wt = np.concatenate(t_weights)
        phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
        tt, pp = np.meshgrid(t, phi, indexing="ij")
        s = np.sqrt(1.0 - tt ** 2)
        normals = np.stack([tt, s * np.cos(pp), s * np.sin(pp)], axis=-1).reshape(-1, 3)
        weights = (self.r ** 2 * wt[:, None] * (2.0 * math.pi / n_phi) * np.ones_like(pp)).ravel()
        return self.r * normals, normals, weights

    def to_grid_coordinates(self, x):
        x = _as_vec(x)
        rad = _norm(x)
        safe = np.where(rad > 0.0, rad, 1.0)
        theta = np.where(rad > 0.0, np.arccos(np.clip(x[..., 0] / safe, -1.0, 1.0)), 0.0)
        phi = np.mod(np.arctan2(x[..., 2], x[..., 1]), 2.0 * math.pi)
        return np.stack([rad / self.r, theta, phi], axis=-1)

    def from_grid_coordinates(self, c):
        rad = self.r * c[..., 0]
        s = np.sin(c[..., 1])
        return np.stack(
            [rad * np.cos(c[..., 1]), rad * s * np.cos(c[..., 2]), rad * s * np.sin(c[..., 2])], axis=-1
        )

    def collocation_axes(self, n):
        # Chebyshev-spaced shells, outermost at INNER_SHELL * r
        radial = INNER_SHELL * np.sin(0.5 * math.pi * (np.arange(n) + 1.0) / n)
        n_polar = max(2, n // 2)
        polar = math.pi * (np.arange(n_polar) + 0.5) / n_polar
        azimuth = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        return radial, polar, azimuth

    def collocation_weights(self, axes):
        radial, polar, azimuth = axes
        r_edges = np.concatenate([[0.0], 0.5 * (radial[1:] + radial[:-1]), [1.0]])
        t_edges = np.concatenate([[0.0], 0.5 * (polar[1:] + polar[:-1]), [math.pi]])
        w_r = self.r ** 3 * np.diff(r_edges ** 3) / 3.0
        w_t = -np.diff(np.cos(t_edges))
        w_p = np.full(azimuth.size, 2.0 * math.pi / azimuth.size)
        return w_r[:, None, None] * w_t[None, :, None] * w_p[None, None, :]


class FlatCap(ConvexDomain):
    """{x : |x + (a,0,0)| < R} ∩ {x1 < 0}: a ball cut by the plane x1 = 0."""

    kind = "flat_cap"

    def __init__(self, R: float, a: float, r1: float = None):
        if not 0.0 < a < R:
            raise ValueError(f"flat cap needs 0 < a < R, got a={a}, R={R}")
        if r1 is not None and R < r1 + a:
            raise ValueError(f"flat cap needs R >= r1 + a, got R={R}, r1={r1}, a={a}")
        self.R = float(R)
        self.a = float(a)
        self.r1 = None if r1 is None else float(r1)
        self.center = np.array([-self.a, 0.0, 0.0])

    def __repr__(self) -> str:
        return f"FlatCap(R={self.R}, a={self.a}, r1={self.r1})"

    @property
    def flat_radius(self) -> float:
        return math.sqrt(self.R ** 2 - self.a ** 2)

    @property
    def diam(self) -> float:
        return 2.0 * self.R

    @property
    def volume(self) -> float:
        h = self.R - self.a
        return 4.0 / 3.0 * math.pi * self.R ** 3 - math.pi * h ** 2 * (3.0 * self.R - h) / 3.0

    @property
    def surface_area(self) -> float:
        h = self.R - self.a
        return 4.0 * math.pi * self.R ** 2 - 2.0 * math.pi * self.R * h + math.pi * self.flat_radius ** 2

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        y = x - self.center
        return (_dot(y, y) < (self.R + tol) ** 2) & (x[..., 0] < tol)

    def on_flat_face(self, z, tol: float = 1e-9) -> np.ndarray:
        z = _as_vec(z)
        return np.abs(z[..., 0]) <= tol * self.diam

    def flat_radius_of(self, z) -> np.ndarray:
        """Distance from the x1 axis, the radial coordinate of the discs D_r."""
        z = _as_vec(z)
        return np.hypot(z[..., 1], z[..., 2])

    def normal(self, z) -> np.ndarray:
        z = _as_vec(z)
        sphere = (z - self.center) / self.R
        flat = self.on_flat_face(z) & (self.flat_radius_of(z) < self.flat_radius)
        plane = np.zeros_like(sphere)
        plane[..., 0] = 1.0
        return np.where(flat[..., None], plane, sphere)

    def _trace(self, x, v):
        y = x - self.center
        vv = _dot(v, v)
        b = _dot(y, v)
        gap = np.clip(self.R ** 2 - _dot(y, y), 0.0, None)
        root = np.sqrt(b * b + vv * gap)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_sphere = np.where(b >= 0.0, (b + root) / vv, gap / (root - b))
            s_sphere = np.where(np.isfinite(s_sphere), s_sphere, 0.0)
            s_plane = np.where(v[..., 0] < 0.0, np.maximum(x[..., 0] / v[..., 0], 0.0), np.inf)
        plane = s_plane < s_sphere
        tau = np.where(plane, s_plane, s_sphere)
        q = x - tau[..., None] * v
        n_plane = np.zeros_like(q)
        n_plane[..., 0] = 1.0
        n = np.where(plane[..., None], n_plane, (q - self.center) / self.R)
        return tau, q, n

    def trace_face(self, x, v) -> np.ndarray:
        """Face hit by the backward ray: PLANE_FACE or SPHERE_FACE."""
        x, v = self._validate(x, v)
        _, _, n = self._trace(x, v)
        return np.where(n[..., 0] == 1.0, PLANE_FACE, SPHERE_FACE)

    def chord_bound(self) -> float:
        return math.inf

    def sample_interior(self, rng, n):
        out = np.empty((0, 3))
        lo = np.array([-self.a - self.R, -self.R, -self.R])
        hi = np.array([0.0, self.R, self.R])
        while out.shape[0] < n:
            batch = lo + (hi - lo) * rng.random((2 * n, 3))
            out = np.concatenate([out, batch[self.contains(batch)]])
        return out[:n]

    def sample_boundary(self, rng, n):
        disk_area = math.pi * self.flat_radius ** 2
        n_disk = rng.binomial(n, disk_area / self.surface_area)
        rho = self.flat_radius * np.sqrt(rng.random(n_disk))
        ang = 2.0 * math.pi * rng.random(n_disk)
        disk = np.stack([np.zeros(n_disk), rho * np.cos(ang), rho * np.sin(ang)], axis=-1)
        curved = np.empty((0, 3))
        while curved.shape[0] < n - n_disk:
            u = rng.standard_normal((2 * n + 8, 3))
            u /= _norm(u)[:, None]
            z = self.center + self.R * u
            curved = np.concatenate([curved, z[z[:, 0] < 0.0]])
        curved = curved[: n - n_disk]
        z = np.concatenate([disk, curved])
        normals = np.concatenate([np.tile([1.0, 0.0, 0.0], (n_disk, 1)), (curved - self.center) / self.R])
        order = rng.permutation(n)
        return z[order], normals[order]

    def disk_quadrature(self, radius: float, n_radial: int, n_phi: int, split: float = None):
        """Surface rule on the flat disc D_radius, optionally split at radius `split`."""
        if radius > self.flat_radius:
            raise ValueError(f"disc radius {radius} exceeds the flat face radius {self.flat_radius}")
        edges = [0.0, radius] if split is None else [0.0, split, radius]
        rho, w_rho = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes, weights = gauss_legendre(n_radial, lo, hi)
            rho.append(nodes)
            w_rho.append(weights)
        rho = np.concatenate(rho)
        w_rho = np.concatenate(w_rho)
        phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
        rr, pp = np.meshgrid(rho, phi, indexing="ij")
        z = np.stack([np.zeros_like(rr), rr * np.cos(pp), rr * np.sin(pp)], axis=-1).reshape(-1, 3)
        weights = (rr * w_rho[:, None] * (2.0 * math.pi / n_phi)).ravel()
        normals = np.tile([1.0, 0.0, 0.0], (z.shape[0], 1))
        return z, normals, weights

    def boundary_quadrature(self, order):
        z_disk, n_disk, w_disk = self.disk_quadrature(self.flat_radius, order, 2 * order)
        t, wt = gauss_legendre(order, -1.0, self.a / self.R)
        phi = 2.0 * math.pi * (np.arange(2 * order) + 0.5) / (2 * order)
        tt, pp = np.meshgrid(t, phi, indexing="ij")
        s = np.sqrt(1.0 - tt ** 2)
        normals = np.stack([tt, s * np.cos(pp), s * np.sin(pp)], axis=-1).reshape(-1, 3)
        weights = (self.R ** 2 * wt[:, None] * (2.0 * math.pi / (2 * order)) * np.ones_like(pp)).ravel()
        z = self.center + self.R * normals
        return (
            np.concatenate([z_disk, z]),
            np.concatenate([n_disk, normals]),
            np.concatenate([w_disk, weights]),
        )

    def _section_radius(self, x1):
        return np.sqrt(np.clip(self.R ** 2 - (x1 + self.a) ** 2, 0.0, None))

    def to_grid_coordinates(self, x):
        x = _as_vec(x)
        length = self.a + self.R
        c0 = (x[..., 0] + length) / length
        section = self._section_radius(x[..., 0])
        rho = self.flat_radius_of(x)
        c1 = np.where(section > 0.0, rho / np.where(section > 0.0, section, 1.0), 0.0)
        phi = np.mod(np.arctan2(x[..., 2], x[..., 1]), 2.0 * math.pi)
        return np.stack([c0, c1, phi], axis=-1)

    def from_grid_coordinates(self, c):
        x1 = c[..., 0] * (self.a + self.R) - self.a - self.R
        rho = c[..., 1] * self._section_radius(x1)
        return np.stack([x1, rho * np.cos(c[..., 2]), rho * np.sin(c[..., 2])], axis=-1)

    def collocation_axes(self, n):
        axial = (np.arange(n) + 0.5) / n
        n_radial = max(2, n // 2)
        radial = INNER_SHELL * np.sin(0.5 * math.pi * (np.arange(n_radial) + 1.0) / n_radial)
        azimuth = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        return axial, radial, azimuth

    def collocation_weights(self, axes):
        axial, radial, azimuth = axes
        a_edges = np.concatenate([[0.0], 0.5 * (axial[1:] + axial[:-1]), [1.0]])
        r_edges = np.concatenate([[0.0], 0.5 * (radial[1:] + radial[:-1]), [1.0]])
        u = a_edges * (self.a + self.R) - self.R
        w_a = np.diff(self.R ** 2 * u - u ** 3 / 3.0)
        w_r = 0.5 * np.diff(r_edges ** 2)
        w_p = np.full(azimuth.size, 2.0 * math.pi / azimuth.size)
        return w_a[:, None, None] * w_r[None, :, None] * w_p[None, None, :]


def build_domain(spec) -> ConvexDomain:
    """Construct a domain from its config section (BallSpec or FlatCapSpec)."""
    if spec.kind == "ball":
        return Ball(spec.r)
    if spec.kind == "flat_cap":
        return FlatCap(spec.R, spec.a, spec.r1)
    raise ValueError(f"unknown domain kind: {spec.kind}")
