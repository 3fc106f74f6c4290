"""
Transport Operators
Boundary data, the free-streaming operator J and the line integrals S along backward
characteristics, with the derivative-side operators used in the regularity analysis.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .collision import HardSphere, maxwellian
from .geometry import GRAZING_TOL, Ball, ConvexDomain, FlatCap, GrazingSingularityError
from .logging_config import get_logger
from .quadrature import gauss_legendre

log = get_logger("transport")

E1 = np.array([1.0, 0.0, 0.0])


def _psi(s: np.ndarray) -> np.ndarray:
    safe = np.where(s > 0.0, s, 1.0)
    return np.where(s > 0.0, np.exp(-1.0 / safe), 0.0)


def smooth_step(t) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    left = _psi(t)
    return left / (left + _psi(1.0 - t))


def cutoff_profile(s, inner: float, outer: float) -> np.ndarray:
    """1 for s <= inner, 0 for s >= outer, smooth in between."""
    return 1.0 - smooth_step((np.asarray(s, dtype=float) - inner) / (outer - inner))


class BoundaryData:
    """Incoming data g(z, v) = phi(z) e^{-|v|^2/2} on the incoming boundary."""

    fd_step = 1e-6

    def __init__(self, dom: ConvexDomain):
        self.dom = dom

    def profile(self, z) -> np.ndarray:
        """phi on the boundary."""
        raise NotImplementedError

    def extension(self, x) -> np.ndarray:
        """A smooth extension of phi off the boundary, used for surface derivatives."""
        raise NotImplementedError

    def __call__(self, z, v) -> np.ndarray:
        return self.profile(z) * maxwellian(v)

    def tangential_gradient(self, z, v) -> np.ndarray:
        """Surface gradient grad_X g(z, v) by central differences of the extension."""
        z = np.asarray(z, dtype=float)
        h = self.fd_step * self.dom.diam
        grad = np.empty(z.shape)
        for i in range(3):
            dz = np.zeros(3)
            dz[i] = h
            grad[..., i] = (self.extension(z + dz) - self.extension(z - dz)) / (2.0 * h)
        n = self.dom.normal(z)
        grad -= np.sum(grad * n, axis=-1, keepdims=True) * n
        return grad * maxwellian(v)[..., None]

    def velocity_gradient(self, z, v) -> np.ndarray:
        """grad_v g = -v g."""
        return -np.asarray(v, dtype=float) * self(z, v)[..., None]


class FlatCutoff(BoundaryData):
    """phi_1: 1 on the disc D_{r1/4}, 0 outside D_{r1/2}, on the flat face of a FlatCap."""

    def __init__(self, dom: FlatCap, r1: float):
        if not isinstance(dom, FlatCap):
            raise ValueError("flat cutoff data needs a flat_cap domain")
        if r1 > dom.flat_radius:
            raise ValueError(f"r1 = {r1} exceeds the flat face radius {dom.flat_radius:.6g}")
        super().__init__(dom)
        self.r1 = float(r1)

    def extension(self, x) -> np.ndarray:
        return cutoff_profile(self.dom.flat_radius_of(x), self.r1 / 4.0, self.r1 / 2.0)

    def profile(self, z) -> np.ndarray:
        return np.where(self.dom.on_flat_face(z), self.extension(z), 0.0)

    def tangential_gradient(self, z, v) -> np.ndarray:
        grad = super().tangential_gradient(z, v)
        return np.where(self.dom.on_flat_face(z)[..., None], grad, 0.0)

    def plateau(self, z) -> np.ndarray:
        """Boundary points where phi_1 is identically 1 nearby (the disc D_{r1/4})."""
        return self.dom.on_flat_face(z) & (self.dom.flat_radius_of(z) < self.r1 / 4.0)


class CapCutoff(BoundaryData):
    """phi_2: 1 on the cap of polar angle < theta1 around +x1, 0 beyond theta2."""

    def __init__(self, dom: Ball, theta1: float, theta2: float):
        if not isinstance(dom, Ball):
            raise ValueError("cap cutoff data needs a ball domain")
        if not 0.0 < theta1 < theta2 < math.pi:
            raise ValueError(f"cap cutoff needs 0 < theta1 < theta2 < pi, got {theta1}, {theta2}")
        super().__init__(dom)
        self.theta1 = float(theta1)
        self.theta2 = float(theta2)

    def extension(self, x) -> np.ndarray:
        return cutoff_profile(self.dom.polar_angle(x), self.theta1, self.theta2)

    def profile(self, z) -> np.ndarray:
        return self.extension(z)

    def plateau(self, z) -> np.ndarray:
        return self.dom.polar_angle(z) < self.theta1


class CustomData(BoundaryData):
    """Arbitrary data g(z, v) given as a callable; tangential gradient optional."""

    def __init__(self, dom: ConvexDomain, fn: Callable, gradient: Optional[Callable] = None):
        super().__init__(dom)
        self.fn = fn
        self.gradient = gradient

    def __call__(self, z, v) -> np.ndarray:
        return np.asarray(self.fn(z, v), dtype=float)

    def tangential_gradient(self, z, v) -> np.ndarray:
        if self.gradient is None:
            return np.zeros(np.broadcast_shapes(np.shape(z), np.shape(v)))
        return self.gradient(z, v)

    def velocity_gradient(self, z, v) -> np.ndarray:
        raise NotImplementedError("custom data has no velocity gradient")


def build_boundary_data(spec, dom: ConvexDomain) -> BoundaryData:
    if spec.kind == "flat_cutoff":
        return FlatCutoff(dom, spec.r1)
    if spec.kind == "cap_cutoff":
        return CapCutoff(dom, spec.theta1, spec.theta2)
    raise ValueError(f"unknown boundary data kind: {spec.kind}")


@dataclass(frozen=True)
class LineQuadrature:
    """Composite Gauss-Legendre rule on [0, tau], panels no longer than 1/(2 rate)."""

    order: int = 8
    max_panels: int = 128
    decay_cutoff: float = 40.0

    def batch(self, tau, rate):
        """Nodes and weights, shape (..., panels * order), one panel count for the batch."""
        tau = np.asarray(tau, dtype=float)
        rate = np.broadcast_to(np.asarray(rate, dtype=float), tau.shape)
        length = np.minimum(tau, self.decay_cutoff / rate)
        spread = float(np.max(2.0 * rate * length)) if length.size else 1.0
        panels = int(min(max(math.ceil(spread), 1), self.max_panels))
        x, w = gauss_legendre(self.order, 0.0, 1.0)
        offsets = (np.arange(panels)[:, None] + x[None, :]).ravel() / panels
        weights = np.tile(w, panels) / panels
        return length[..., None] * offsets, length[..., None] * weights

    def nodes(self, tau: float, rate: float):
        s, w = self.batch(np.array([tau]), np.array([rate]))
        return s[0], w[0]


def _flatten(x, v):
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    shape = x.shape[:-1]
    return x.reshape(-1, 3), v.reshape(-1, 3), shape


def _moving(v: np.ndarray):
    speed = np.sqrt(np.sum(v * v, axis=-1))
    moving = speed > 0.0
    return moving, np.where(moving[..., None], v, E1)


def apply_J(dom: ConvexDomain, model: HardSphere, data: Callable, x, v) -> np.ndarray:
    """Jg(x, v) = e^{-nu tau} g(q, v), with Jg(x, 0) = 0."""
    x, v, shape = _flatten(x, v)
    moving, v_safe = _moving(v)
    tau, q = dom.footpoint(x, v_safe)
    value = np.exp(-model.nu(v_safe) * tau) * data(q, v_safe)
    return np.where(moving, value, 0.0).reshape(shape)


def _line_integral(dom, model, h, x, v, lq: LineQuadrature, power: int) -> np.ndarray:
    x, v, shape = _flatten(x, v)
    out = np.empty(x.shape[0])
    moving, _ = _moving(v)
    still = ~moving
    if np.any(still):
        nu_0 = model.nu(v[still])
        # the ray never exits: ∫_0^inf s^k e^{-nu s} ds h(x, 0)
        out[still] = math.factorial(power) * h(x[still], v[still]) / nu_0 ** (power + 1)
    if np.any(moving):
        xm, vm = x[moving], v[moving]
        tau = dom.exit_time(xm, vm)
        nu = model.nu(vm)
        s, w = lq.batch(tau, nu)
        points = xm[:, None, :] - s[..., None] * vm[:, None, :]
        values = h(points, np.broadcast_to(vm[:, None, :], points.shape))
        weight = w * np.exp(-nu[:, None] * s)
        if power:
            weight = weight * s ** power
        out[moving] = np.sum(weight * values, axis=-1)
    return out.reshape(shape)


def apply_S(dom: ConvexDomain, model: HardSphere, h: Callable, x, v, lq: LineQuadrature = LineQuadrature()) -> np.ndarray:
    """S h(x, v) = ∫_0^tau e^{-nu s} h(x - s v, v) ds; h(x, 0)/nu(0) at v = 0."""
    return _line_integral(dom, model, h, x, v, lq, 0)


def apply_S_s(dom: ConvexDomain, model: HardSphere, h: Callable, x, v, lq: LineQuadrature = LineQuadrature()) -> np.ndarray:
    """S_s h(x, v) = ∫_0^tau s e^{-nu s} h(x - s v, v) ds."""
    return _line_integral(dom, model, h, x, v, lq, 1)


def apply_S_x(dom: ConvexDomain, model: HardSphere, h_boundary: Callable, x, v) -> np.ndarray:
    """S_x h(x, v) = grad_x tau e^{-nu tau} h(q, v)."""
    tau, q = dom.footpoint(x, v)
    scale = np.exp(-model.nu(v) * tau) * h_boundary(q, v)
    return dom.grad_x_tau(x, v) * scale[..., None]


def apply_S_v(dom: ConvexDomain, model: HardSphere, h_boundary: Callable, x, v) -> np.ndarray:
    """S_v h(x, v) = grad_v tau e^{-nu tau} h(q, v), with grad_v tau by finite differences."""
    tau, q = dom.footpoint(x, v)
    if np.any(dom.grazing_factor(q, v) < GRAZING_TOL):
        raise GrazingSingularityError("grazing footpoint: N(q(x,v), v) = 0")
    scale = np.exp(-model.nu(v) * tau) * h_boundary(q, v)
    return dom.grad_v_tau_fd(x, v) * scale[..., None]


def grad_x_J(dom: ConvexDomain, model: HardSphere, data: BoundaryData, x, v) -> np.ndarray:
    """grad_x Jg = -nu (grad_x tau) Jg + (grad_x q) J(grad_X g), grad_x q = I - grad_x tau ⊗ v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    tau, q = dom.footpoint(x, v)
    decay = np.exp(-model.nu(v) * tau)
    dtau = dom.grad_x_tau(x, v)
    surface = data.tangential_gradient(q, v)
    along = np.sum(v * surface, axis=-1)
    return -model.nu(v)[..., None] * apply_S_x(dom, model, data, x, v) + decay[..., None] * (surface - along[..., None] * dtau)


def grad_v_J(dom: ConvexDomain, model: HardSphere, data: BoundaryData, x, v) -> np.ndarray:
    """grad_v Jg = -tau (grad nu) Jg - nu (grad_v tau) Jg + (grad_v q) J(grad_X g) + J(grad_v g)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    tau, q = dom.footpoint(x, v)
    nu = model.nu(v)
    decay = np.exp(-nu * tau)
    jg = decay * data(q, v)
    dtau = dom.grad_v_tau(x, v)
    surface = data.tangential_gradient(q, v)
    along = np.sum(v * surface, axis=-1)
    return (
        -(tau * jg)[..., None] * model.nu_grad(v)
        - (nu * jg)[..., None] * dtau
        + decay[..., None] * (-tau[..., None] * surface - along[..., None] * dtau)
        + decay[..., None] * data.velocity_gradient(q, v)
    )


def time_moment_bound(b: float, a: float) -> float:
    """sup_{t>0} t^b e^{-a t/2}, so that t^b e^{-a t} <= this * e^{-a t/2}."""
    if a <= 0.0:
        raise ValueError(f"decay rate must be positive, got {a}")
    if b < 0.0:
        raise ValueError(f"moment order must be nonnegative, got {b}")
    if b == 0.0:
        return 1.0
    return (2.0 * b / (a * math.e)) ** b


def duhamel_residual(dom: ConvexDomain, model: HardSphere, h: Callable, x, v, lq: LineQuadrature = LineQuadrature(), step: float = 1e-4) -> np.ndarray:
    """Relative residual of v.grad_x u + nu u = h for u = S h, by central differences along v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    delta = step * dom.exit_time(x, v)
    d = delta[..., None] * v
    u_plus = apply_S(dom, model, h, x + d, v, lq)
    u_minus = apply_S(dom, model, h, x - d, v, lq)
    u = apply_S(dom, model, h, x, v, lq)
    target = h(x, v)
    residual = (u_plus - u_minus) / (2.0 * delta) + model.nu(v) * u - target
    return np.abs(residual) / np.maximum(np.abs(target), 1e-300)


def uniform_weight_bound(
    dom: ConvexDomain,
    model: HardSphere,
    data: Callable,
    h: Callable,
    alpha: float,
    n_samples: int = 2000,
    seed: int = 7,
    v_max: float = 4.0,
    lq: LineQuadrature = LineQuadrature(),
) -> dict:
    """Sampled C_alpha ratios ||Jg|| / ||g|| (<= 1) and ||S h|| / ||h|| (<= 1/nu0), ||f|| = sup |f| e^{alpha |v|^2}."""
    rng = np.random.default_rng(seed)
    x = dom.sample_interior(rng, n_samples)
    u = rng.standard_normal((n_samples, 3))
    v = u / np.linalg.norm(u, axis=-1, keepdims=True) * (v_max * rng.random(n_samples) ** (1.0 / 3.0))[:, None]
    weight = np.exp(alpha * np.sum(v * v, axis=-1))

    _, q = dom.footpoint(x, v)
    j_norm = float(np.max(np.abs(apply_J(dom, model, data, x, v)) * weight))
    g_norm = float(np.max(np.abs(data(q, v)) * weight))

    s_norm = float(np.max(np.abs(apply_S(dom, model, h, x, v, lq)) * weight))
    tau = dom.exit_time(x, v)
    # sup of h over the sampled points and their backward rays
    s, _ = lq.batch(tau, np.ones_like(tau))
    ray = x[:, None, :] - s[..., None] * v[:, None, :]
    h_norm = float(np.max(np.abs(h(ray, np.broadcast_to(v[:, None, :], ray.shape))) * weight[:, None]))
    h_norm = max(h_norm, float(np.max(np.abs(h(x, v)) * weight)))
    return {
        "J_ratio": j_norm / g_norm if g_norm > 0.0 else 0.0,
        "S_ratio": s_norm / h_norm if h_norm > 0.0 else 0.0,
        "S_bound": 1.0 / model.nu0,
    }
