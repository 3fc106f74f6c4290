"""
Hard-Sphere Collision Model
Collision frequency, gain kernel, Gaussian envelopes and the velocity quadrature applying K.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .logging_config import get_logger, timed
from .quadrature import gauss_legendre, spherical_directions

log = get_logger("collision")

C_HS = 2.0 ** -1.5
SQRT_PI_2 = 0.5 * math.sqrt(math.pi)
SMALL_SPEED = 1e-4
FD_REL_STEP = 1e-5


def _speed(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sqrt(np.sum(v * v, axis=-1))


def _erf_ratio(u: np.ndarray) -> np.ndarray:
    """(1/u) ∫_0^u e^{-s^2} ds, continuous at u = 0."""
    u = np.asarray(u, dtype=float)
    safe = np.where(u > SMALL_SPEED, u, 1.0)
    series = 1.0 - u * u / 3.0 + u ** 4 / 10.0
    return np.where(u > SMALL_SPEED, SQRT_PI_2 * special.erf(safe) / safe, series)


def nu_of_speed(u) -> np.ndarray:
    """Hard-sphere collision frequency as a function of |v|."""
    u = np.asarray(u, dtype=float)
    return C_HS * (np.exp(-u * u) + (2.0 * u * u + 1.0) * _erf_ratio(u))


def nu_prime(u) -> np.ndarray:
    """d nu / d|v|."""
    u = np.asarray(u, dtype=float)
    safe = np.where(u > 1e-3, u, 1.0)
    exact = (np.exp(-safe * safe) / safe
             + (2.0 - 1.0 / (safe * safe)) * SQRT_PI_2 * special.erf(safe))
    series = 4.0 * u / 3.0 - 4.0 * u ** 3 / 15.0
    return C_HS * np.where(u > 1e-3, exact, series)


def envelope_E(v, v_star, rho: float) -> np.ndarray:
    """Gaussian envelope E_rho(v, v*) of the gain kernel."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    w2 = np.sum((v - v_star) ** 2, axis=-1)
    if np.any(w2 == 0.0):
        raise ValueError("envelope is undefined at v = v*")
    energy = np.sum(v * v, axis=-1) - np.sum(v_star * v_star, axis=-1)
    return np.exp(-0.25 * (1.0 - rho) * (w2 + energy * energy / w2))


def alpha_constants(a: float, rho: float) -> Tuple[float, float]:
    """(alpha_1, alpha_2) of the kernel exponent identity."""
    s = 1.0 - rho
    return (s - 2.0 * a) * (s + 2.0 * a) / (4.0 * s), (s - 2.0 * a) / (2.0 * s)


def identity_check(v, v_star, a: float, rho: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three equal forms of the envelope exponent: (lhs, rhs1, rhs2)."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    w = v - v_star
    d2 = np.sum(w * w, axis=-1)
    if np.any(d2 == 0.0):
        raise ValueError("identity is undefined at v = v*")
    d = np.sqrt(d2)
    v2 = np.sum(v * v, axis=-1)
    s2 = np.sum(v_star * v_star, axis=-1)
    s = 1.0 - rho
    alpha1, alpha2 = alpha_constants(a, rho)

    lhs = -0.25 * s * (d2 + ((v2 - s2) / d) ** 2)
    rhs1 = a * v2 - alpha1 * d2 - s * (np.sum(w * v, axis=-1) / d - alpha2 * d) ** 2 - a * s2
    rhs2 = -a * v2 - alpha1 * d2 - s * (np.sum(w * v_star, axis=-1) / d + alpha2 * d) ** 2 + a * s2
    return lhs, rhs1, rhs2


def check_admissible(a: float, mu: float, rho: float):
    """Reject exponents outside -mu(1-rho)/2 < a < mu(1-rho)/2."""
    band = mu * (1.0 - rho) / 2.0
    if not -band < a < band:
        raise ValueError(f"a = {a} outside the admissible band |a| < {band:.6g} (mu={mu}, rho={rho})")


def pointwise_envelope(v, v_star, a: float, rho: float) -> np.ndarray:
    """|w|^-1 e^{-a|v|^2} e^{-alpha_1 |w|^2} e^{a|v*|^2}, the a-shifted kernel envelope."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    d2 = np.sum((v - v_star) ** 2, axis=-1)
    alpha1, _ = alpha_constants(a, rho)
    exponent = -a * np.sum(v * v, axis=-1) - alpha1 * d2 + a * np.sum(v_star * v_star, axis=-1)
    return np.exp(exponent) / np.sqrt(d2)


@dataclass(frozen=True)
class BoundOnly:
    """Kernel known only through its bound parameters nu0, nu1, gamma, rho."""

    nu0: float
    nu1: float
    gamma: float = 1.0
    rho: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.nu0 <= self.nu1:
            raise ValueError(f"need 0 < nu0 <= nu1, got nu0={self.nu0}, nu1={self.nu1}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    def nu_bounds(self, v) -> Tuple[np.ndarray, np.ndarray]:
        weight = (1.0 + _speed(v)) ** self.gamma
        return self.nu0 * weight, self.nu1 * weight

    def kernel_bound(self, v, v_star) -> np.ndarray:
        """Right side of the pointwise kernel bound, without its constant."""
        v = np.asarray(v, dtype=float)
        v_star = np.asarray(v_star, dtype=float)
        d = _speed(v - v_star)
        spread = (1.0 + _speed(v) + _speed(v_star)) ** (1.0 - self.gamma)
        return envelope_E(v, v_star, self.rho) / (d * spread)


class HardSphere:
    """Hard-sphere linearized collision operator: nu(v) and the gain kernel k(v, v*)."""

    gamma = 1.0

    def __init__(self, rho: float = 0.5, gain_scale: float = 1.0):
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {rho}")
        if gain_scale < 0.0:
            raise ValueError(f"gain_scale must be nonnegative, got {gain_scale}")
        self.rho = float(rho)
        self.gain_scale = float(gain_scale)
        self._nu0: Optional[float] = None

    def __repr__(self) -> str:
        return f"HardSphere(rho={self.rho}, gain_scale={self.gain_scale})"

    def nu(self, v) -> np.ndarray:
        return nu_of_speed(_speed(v))

    def nu_grad(self, v) -> np.ndarray:
        """grad_v nu = nu'(|v|) v/|v| (zero at v = 0)."""
        v = np.asarray(v, dtype=float)
        u = _speed(v)
        safe = np.where(u > 0.0, u, 1.0)
        return (nu_prime(u) / safe)[..., None] * v

    def kernel(self, v, v_star) -> np.ndarray:
        """k(v, v*); symmetric in its arguments, rejected at v = v*."""
        v = np.asarray(v, dtype=float)
        v_star = np.asarray(v_star, dtype=float)
        w = v_star - v
        d2 = np.sum(w * w, axis=-1)
        if np.any(d2 == 0.0):
            raise ValueError("kernel is singular at v = v*")
        d = np.sqrt(d2)
        s_v = np.sum(v * v, axis=-1)
        s_star = np.sum(v_star * v_star, axis=-1)
        gap = s_star - s_v
        gain = 2.0 / d * np.exp(-0.25 * gap * gap / d2 - 0.25 * d2)
        loss = d * np.exp(-0.5 * (s_star + s_v))
        return self.gain_scale * C_HS / math.pi * (gain - loss)

    def kernel_grad_v(self, v, v_star, step: float = None) -> np.ndarray:
        """grad_v k(v, v*) by central differences with step 1e-5 (1 + |v|)."""
        v = np.asarray(v, dtype=float)
        v_star = np.asarray(v_star, dtype=float)
        h = FD_REL_STEP * (1.0 + float(np.max(_speed(v)))) if step is None else step
        shape = np.broadcast_shapes(v.shape, v_star.shape)
        grad = np.empty(shape)
        for i in range(3):
            dv = np.zeros(3)
            dv[i] = h
            grad[..., i] = (self.kernel(v + dv, v_star) - self.kernel(v - dv, v_star)) / (2.0 * h)
        return grad

    @property
    def nu0(self) -> float:
        """Largest c with c (1 + |v|) <= nu(v), from a fine speed grid with a 1e-6 margin."""
        if self._nu0 is None:
            u = np.linspace(0.0, 60.0, 60001)
            self._nu0 = float(np.min(nu_of_speed(u) / (1.0 + u))) * (1.0 - 1e-6)
        return self._nu0

    @property
    def nu1(self) -> float:
        """Smallest c with nu(v) <= c (1 + |v|); attained at v = 0."""
        return float(nu_of_speed(0.0))

    def as_bounds(self) -> BoundOnly:
        return BoundOnly(self.nu0, self.nu1, self.gamma, self.rho)


def build_kernel(spec) -> HardSphere:
    """Construct the collision model from its config section."""
    if spec.model != "hard_sphere":
        raise ValueError(f"unknown collision model: {spec.model}")
    return HardSphere(rho=spec.rho, gain_scale=spec.gain_scale)


@dataclass(frozen=True)
class VelocityQuadrature:
    """Spherical rule in v* = v + r w centered at the evaluation velocity.

    The r^2 Jacobian cancels the |v - v*|^-1 kernel singularity. Integration
    covers |v*| <= v_max (or |v* - v| <= v_max when centered), optionally cut
    to a half-space n.v* < 0 ("minus") or n.v* > 0 ("plus"). The polar axis is
    the half-space normal, with the cosine rule split at 0 so the cut falls on
    a panel edge.
    """

    v_max: float = 8.0
    n_r: int = 48
    n_theta: int = 32
    n_phi: int = 32
    centered: bool = False

    def __post_init__(self):
        if self.n_theta % 2 or self.n_phi % 2:
            raise ValueError("angular orders must be even")

    @classmethod
    def from_spec(cls, spec, centered: bool = False) -> "VelocityQuadrature":
        return cls(spec.v_max, spec.n_r, spec.n_theta, spec.n_phi, centered)

    def refined(self) -> "VelocityQuadrature":
        """The same rule with every order doubled."""
        return VelocityQuadrature(self.v_max, 2 * self.n_r, 2 * self.n_theta, 2 * self.n_phi, self.centered)

    def rule(self, v, normal=None, side: str = None) -> Tuple[np.ndarray, np.ndarray]:
        """(nodes v*, weights) for integrating over v* around v."""
        v = np.asarray(v, dtype=float)
        axis = np.array([1.0, 0.0, 0.0]) if normal is None else np.asarray(normal, dtype=float)
        half = self.n_theta // 2
        t_lo, w_lo = gauss_legendre(half, -1.0, 0.0)
        t_hi, w_hi = gauss_legendre(half, 0.0, 1.0)
        t = np.concatenate([t_lo, t_hi])
        wt = np.concatenate([w_lo, w_hi])
        phi = 2.0 * math.pi * np.arange(self.n_phi) / self.n_phi
        tt, pp = np.meshgrid(t, phi, indexing="ij")
        omega = spherical_directions(axis, tt.ravel(), pp.ravel())
        w_ang = np.repeat(wt, self.n_phi) * (2.0 * math.pi / self.n_phi)

        if self.centered:
            lo = np.zeros(omega.shape[0])
            hi = np.full(omega.shape[0], self.v_max)
            valid = np.ones(omega.shape[0], dtype=bool)
        else:
            b = omega @ v
            disc = b * b - (v @ v - self.v_max ** 2)
            root = np.sqrt(np.clip(disc, 0.0, None))
            lo = np.maximum(0.0, -b - root)
            hi = -b + root
            valid = disc > 0.0

        if side is not None:
            if normal is None:
                raise ValueError("a half-space cut needs a normal")
            if side not in ("minus", "plus"):
                raise ValueError(f"side must be 'minus' or 'plus', got {side}")
            sign = 1.0 if side == "minus" else -1.0
            nv = sign * float(axis @ v)
            tn = sign * tt.ravel()
            with np.errstate(divide="ignore"):
                cut = -nv / tn
            hi = np.where(tn > 0.0, np.minimum(hi, cut), hi)
            lo = np.where(tn < 0.0, np.maximum(lo, cut), lo)

        valid &= hi > lo
        span = np.where(valid, hi - lo, 0.0)
        x, wx = gauss_legendre(self.n_r, 0.0, 1.0)
        r = lo[:, None] + span[:, None] * x[None, :]
        weights = (w_ang[:, None] * span[:, None] * wx[None, :]) * r * r
        nodes = v + r[..., None] * omega[:, None, :]
        keep = np.repeat(valid, self.n_r)
        return nodes.reshape(-1, 3)[keep], weights.ravel()[keep]


def apply_K(model: HardSphere, h: Callable, v, quad: VelocityQuadrature, normal=None, side: str = None) -> float:
    """K h(v) = ∫ k(v, v*) h(v*) dv* with the rule centered at v."""
    nodes, weights = quad.rule(v, normal, side)
    if nodes.shape[0] == 0:
        return 0.0
    return float(np.sum(weights * model.kernel(v, nodes) * h(nodes)))


def apply_K_grad(model: HardSphere, h: Callable, v, quad: VelocityQuadrature) -> np.ndarray:
    """K_v h(v) = ∫ grad_v k(v, v*) h(v*) dv*."""
    nodes, weights = quad.rule(v)
    if nodes.shape[0] == 0:
        return np.zeros(3)
    grad = model.kernel_grad_v(v, nodes)
    return np.sum((weights * h(nodes))[:, None] * grad, axis=0)


def half_space_gain(model: HardSphere, v, normal, quad: VelocityQuadrature, side: str = "minus") -> float:
    """∫_{n.v* < 0} k(v, v*) e^{-|v*|^2/2} dv* (or the n.v* > 0 half with side="plus")."""
    return apply_K(model, maxwellian, v, quad, normal, side)


def maxwellian(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.exp(-0.5 * np.sum(v * v, axis=-1))


def fit_constant(ratios: Sequence[float], slack: float, reference: int = 0) -> Dict:
    """Fit C at ratios[reference] and certify every ratio <= slack * C."""
    ratios = np.asarray(ratios, dtype=float)
    constant = float(ratios[reference])
    if not np.all(np.isfinite(ratios)) or constant <= 0.0:
        return {"constant": constant, "max_normalized": math.inf, "slack": slack, "passed": False}
    normalized = float(np.max(ratios / constant))
    return {"constant": constant, "max_normalized": normalized, "slack": slack, "passed": normalized <= slack}


def _random_pairs(rng: np.random.Generator, n: int, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    v = rng.uniform(-radius, radius, (n, 3))
    v_star = rng.uniform(-radius, radius, (n, 3))
    return v, v_star


def _direction(speed: float) -> np.ndarray:
    return np.array([speed, 0.0, 0.0])


@timed(name="collision.envelope_sweep")
def envelope_sweep(
    model: HardSphere,
    quad: VelocityQuadrature,
    speeds: Iterable[float] = (0.0, 1.0, 2.0, 4.0, 8.0),
    exponents: Iterable[Tuple[float, float]] = ((1.0, 0.0), (2.0, 0.0), (1.0, 0.1)),
    n_pairs: int = 10000,
    seed: int = 7,
    fit_slack: float = 5.0,
) -> Dict:
    """Pointwise envelope ratio on random pairs and the integrated |k|^mu decay bound per (mu, a)."""
    rng = np.random.default_rng(seed)
    v, v_star = _random_pairs(rng, n_pairs, 4.0)
    bounds = BoundOnly(1.0, 1.0, model.gamma, model.rho)
    pointwise = np.abs(model.kernel(v, v_star)) / bounds.kernel_bound(v, v_star)
    report = {"pointwise_max": float(np.max(pointwise)), "integrated": [], "shifted": []}
    # the a-shifted envelope dominates E_rho / |w|, so each max stays at or below pointwise_max
    for a in sorted({a for _, a in exponents if a != 0.0}):
        shifted = np.abs(model.kernel(v, v_star)) / pointwise_envelope(v, v_star, a, model.rho)
        report["shifted"].append({"a": a, "max": float(np.max(shifted))})

    centered = VelocityQuadrature(quad.v_max, quad.n_r, quad.n_theta, quad.n_phi, centered=True)
    speeds = list(speeds)
    for mu, a in exponents:
        check_admissible(a, mu, model.rho)
        ratios = []
        for s in speeds:
            vv = _direction(s)
            nodes, weights = centered.rule(vv)
            lhs = np.sum(weights * np.abs(model.kernel(vv, nodes)) ** mu * np.exp(a * np.sum(nodes ** 2, axis=-1)))
            rhs = math.exp(a * s * s) / (1.0 + s)
            ratios.append(lhs / rhs)
        fit = fit_constant(ratios, fit_slack)
        report["integrated"].append({"mu": mu, "a": a, "speeds": speeds, "ratios": ratios, **fit})
        log.info(f"|k|^{mu} decay (a={a}): C={fit['constant']:.4g}, max/C={fit['max_normalized']:.3f}")
    report["passed"] = (
        bool(np.isfinite(report["pointwise_max"]))
        and all(item["max"] <= report["pointwise_max"] * (1.0 + 1e-9) for item in report["shifted"])
        and all(item["passed"] for item in report["integrated"])
    )
    return report


@timed(name="collision.gradient_sweep")
def gradient_sweep(
    model: HardSphere,
    quad: VelocityQuadrature,
    speeds: Iterable[float] = (0.5, 1.0, 2.0, 4.0, 8.0),
    exponents: Iterable[Tuple[float, float]] = ((1.0, 0.0), (1.0, 0.1)),
    n_pairs: int = 2000,
    seed: int = 7,
    fit_slack: float = 5.0,
) -> Dict:
    """Pointwise grad_v k envelope and the integrated |grad_v k|^mu growth bound (0 < mu < 3/2)."""
    rng = np.random.default_rng(seed)
    v, v_star = _random_pairs(rng, n_pairs, 4.0)
    keep = _speed(v - v_star) > 1e-2
    v, v_star = v[keep], v_star[keep]
    grad = np.linalg.norm(model.kernel_grad_v(v, v_star), axis=-1)
    d = _speed(v - v_star)
    bound = (1.0 + _speed(v)) * envelope_E(v, v_star, model.rho) / (d * d)
    report = {"pointwise_max": float(np.max(grad / bound)), "integrated": []}

    centered = VelocityQuadrature(quad.v_max, quad.n_r, quad.n_theta, quad.n_phi, centered=True)
    speeds = list(speeds)
    for mu, a in exponents:
        if not 0.0 < mu < 1.5:
            raise ValueError(f"gradient bound needs 0 < mu < 3/2, got {mu}")
        check_admissible(a, mu, model.rho)
        ratios = []
        for s in speeds:
            vv = _direction(s)
            nodes, weights = centered.rule(vv)
            g = np.linalg.norm(model.kernel_grad_v(vv, nodes), axis=-1)
            lhs = np.sum(weights * g ** mu * np.exp(a * np.sum(nodes ** 2, axis=-1)))
            rhs = (1.0 + s) ** (mu - 1.0) * math.exp(a * s * s)
            ratios.append(lhs / rhs)
        fit = fit_constant(ratios, fit_slack)
        report["integrated"].append({"mu": mu, "a": a, "speeds": speeds, "ratios": ratios, **fit})
    report["passed"] = bool(np.isfinite(report["pointwise_max"])) and all(
        item["passed"] for item in report["integrated"]
    )
    return report


@timed(name="collision.k_grad_scan")
def k_grad_scan(
    model: HardSphere,
    quad: VelocityQuadrature,
    speeds: Iterable[float] = (0.5, 1.0, 2.0, 4.0),
    fit_slack: float = 5.0,
) -> Dict:
    """|K_v M(v)| against (1 + |v|) ∫ |w|^-2 E_rho M dv* for the Maxwellian M."""
    speeds = list(speeds)
    ratios = []
    for s in speeds:
        vv = _direction(s)
        value = np.linalg.norm(apply_K_grad(model, maxwellian, vv, quad))
        nodes, weights = quad.rule(vv)
        d2 = np.sum((nodes - vv) ** 2, axis=-1)
        envelope = np.sum(weights * envelope_E(vv, nodes, model.rho) * maxwellian(nodes) / d2)
        ratios.append(value / ((1.0 + s) * envelope))
    fit = fit_constant(ratios, fit_slack)
    return {"speeds": speeds, "ratios": ratios, **fit}


def identity_sweep(n: int = 10000, seed: int = 7) -> Dict:
    """Largest relative mismatch between the three identity forms on random inputs."""
    rng = np.random.default_rng(seed)
    v, v_star = _random_pairs(rng, n, 3.0)
    rho = rng.uniform(0.05, 0.95, n)
    a = rng.uniform(-1.0, 1.0, n) * (1.0 - rho) / 2.0
    lhs, rhs1, rhs2 = identity_check(v, v_star, a, rho)
    scale = 1.0 + np.abs(lhs)
    swapped = identity_check(v_star, v, a, rho)[2]
    return {
        "max_rel_rhs1": float(np.max(np.abs(lhs - rhs1) / scale)),
        "max_rel_rhs2": float(np.max(np.abs(lhs - rhs2) / scale)),
        "max_rel_swap": float(np.max(np.abs(rhs1 - swapped) / scale)),
    }
