"""
Norms and Counterexample Integrals
Weighted L^p norms, the grazing integrals of the exit-time gradient with their closed-form
reductions, cutoff-refinement divergence diagnosis, the W^{1,p} scan of Jg and the eta-gap scan.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .collision import HardSphere, VelocityQuadrature, half_space_gain, maxwellian
from .config import NormSpec
from .geometry import Ball, ConvexDomain, FlatCap
from .grids import VGrid, XGrid
from .logging_config import get_logger, timed
from .quadrature import composite_gauss, dyadic_edges, gauss_legendre, orthonormal_frame, spherical_directions
from .transport import BoundaryData, CapCutoff, FlatCutoff, LineQuadrature

log = get_logger("analysis")

CONVERGENT = "CONVERGENT"
DIVERGENT = "DIVERGENT"
INCONCLUSIVE = "INCONCLUSIVE"

LN2 = math.log(2.0)
SHELL_WIDTH = 0.5
CONVERGENCE_MARGIN = 0.02
FIT_TOLERANCE = 0.10

__all__ = [
    "NormSpec",
    "NormEstimate",
    "DivergenceVerdict",
    "lp_norm",
    "boundary_lp_norm",
    "grazing_integral",
    "divergence_scan",
    "w1p_of_Jg_scan",
    "eta_gap_scan",
]


@dataclass
class NormEstimate:
    value: float
    error: float
    method: str


# --- grid norms ---

def grid_lp_norm(values: np.ndarray, x_weights: np.ndarray, vgrid: VGrid, p: float, alpha: float) -> float:
    """(sum_x sum_v w_x w_v |f|^p e^{p alpha |v|^2})^{1/p} on a collocation grid."""
    weight = vgrid.weights * np.exp(p * alpha * vgrid.speeds ** 2)
    return float(np.sum(x_weights[:, None] * weight[None, :] * np.abs(values) ** p) ** (1.0 / p))


def weighted_sup(values: np.ndarray, vgrid: VGrid, alpha: float) -> float:
    return float(np.max(np.abs(values) * np.exp(alpha * vgrid.speeds ** 2)[None, :]))


def uniform_norm(values, v, alpha: float) -> float:
    """C_alpha norm sup |f| e^{alpha |v|^2} over sampled points."""
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(values) * np.exp(alpha * np.sum(v * v, axis=-1))))


# --- sampling helpers ---

def _uniform_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.standard_normal((n, 3))
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def _sample_shell(rng: np.random.Generator, n: int, inner: float, outer: float) -> np.ndarray:
    radius = (inner ** 3 + rng.random(n) * (outer ** 3 - inner ** 3)) ** (1.0 / 3.0)
    return radius[:, None] * _uniform_directions(rng, n)


def _ball_volume(radius: float) -> float:
    return 4.0 / 3.0 * math.pi * radius ** 3


def _check_weight(spec: NormSpec, gaussian_decay: Optional[float]):
    if gaussian_decay is not None and spec.alpha >= gaussian_decay:
        raise ValueError(
            f"non-integrable weight: alpha = {spec.alpha} >= decay rate {gaussian_decay} of the data"
        )


# --- L^p norms ---

@timed(name="analysis.lp_norm")
def lp_norm(
    f: Callable,
    dom: ConvexDomain,
    spec: NormSpec,
    method: str = "mc",
    v_max: float = 8.0,
    n_samples: int = 20000,
    seed: int = 7,
    n_grid: int = 8,
    gaussian_decay: Optional[float] = None,
) -> NormEstimate:
    """||f||_{L^p_alpha(Omega x {|v| <= v_max})}.

    "mc" stratifies |v| into shells of width 0.5 and reports a standard error;
    "grid" uses the collocation cell volumes and reports the change under refinement.
    """
    _check_weight(spec, gaussian_decay)
    p, alpha = spec.p, spec.alpha
    if method == "grid":
        value = _grid_norm_integral(f, dom, p, alpha, v_max, n_grid) ** (1.0 / p)
        finer = _grid_norm_integral(f, dom, p, alpha, v_max, 2 * n_grid) ** (1.0 / p)
        return NormEstimate(finer, abs(finer - value), "grid")
    if method != "mc":
        raise ValueError(f"unknown norm method: {method}")

    rng = np.random.default_rng(seed)
    edges = np.arange(0.0, v_max + SHELL_WIDTH, SHELL_WIDTH)
    edges[-1] = v_max
    per_shell = max(n_samples // (edges.size - 1), 2)
    total, variance = 0.0, 0.0
    for inner, outer in zip(edges[:-1], edges[1:]):
        x = dom.sample_interior(rng, per_shell)
        v = _sample_shell(rng, per_shell, inner, outer)
        g = np.abs(f(x, v)) ** p * np.exp(p * alpha * np.sum(v * v, axis=-1))
        scale = dom.volume * (_ball_volume(outer) - _ball_volume(inner))
        total += scale * float(np.mean(g))
        variance += scale ** 2 * float(np.var(g, ddof=1)) / per_shell
    value = total ** (1.0 / p)
    error = math.sqrt(variance) * total ** (1.0 / p - 1.0) / p if total > 0.0 else math.sqrt(variance)
    return NormEstimate(value, error, "mc")


def _grid_norm_integral(f, dom, p, alpha, v_max, n):
    xgrid = XGrid(dom, n)
    vgrid = VGrid(v_max, n, n)
    values = f(xgrid.nodes[:, None, :], vgrid.nodes[None, :, :])
    return grid_lp_norm(values, xgrid.weights, vgrid, p, alpha) ** p


def boundary_lp_norm(
    h: Callable,
    dom: ConvexDomain,
    spec: NormSpec,
    weighting: str = "plain",
    v_max: float = 8.0,
    order: int = 8,
    quad: Optional[VelocityQuadrature] = None,
) -> float:
    """||h|| on the boundary phase space: plain dSigma dv, or incoming with N|v| dSigma dv."""
    if weighting not in ("plain", "incoming"):
        raise ValueError(f"weighting must be 'plain' or 'incoming', got {weighting}")
    quad = quad or VelocityQuadrature(v_max, 24, 8, 8)
    z, normals, wz = dom.boundary_quadrature(order)
    p, alpha = spec.p, spec.alpha
    origin = np.zeros(3)
    total = 0.0
    if weighting == "plain":
        v, wv = quad.rule(origin)
        weight = wv * np.exp(p * alpha * np.sum(v * v, axis=-1))
        values = np.abs(h(z[:, None, :], v[None, :, :])) ** p
        total = float(np.sum(wz[:, None] * weight[None, :] * values))
    else:
        for zk, nk, wk in zip(z, normals, wz):
            v, wv = quad.rule(origin, nk, "minus")
            flux = np.abs(v @ nk)
            weight = wv * flux * np.exp(p * alpha * np.sum(v * v, axis=-1))
            total += wk * float(np.sum(weight * np.abs(h(zk[None, :], v)) ** p))
    return total ** (1.0 / p)


def w1p_norm(f: Callable, grad_x: Callable, grad_v: Callable, dom: ConvexDomain, spec: NormSpec, **kwargs) -> NormEstimate:
    """||f|| + ||grad_x f|| + ||grad_v f|| in L^p_alpha."""
    parts = [
        lp_norm(f, dom, spec, **kwargs),
        lp_norm(lambda x, v: np.linalg.norm(grad_x(x, v), axis=-1), dom, spec, **kwargs),
        lp_norm(lambda x, v: np.linalg.norm(grad_v(x, v), axis=-1), dom, spec, **kwargs),
    ]
    return NormEstimate(sum(e.value for e in parts), sum(e.error for e in parts), parts[0].method)


# --- closed-form factors ---

def t_factor(p: float, k: int, eps: float) -> float:
    """∫_eps^1 t^{k-p} dt."""
    power = k - p + 1.0
    if abs(power) < 1e-12:
        return -math.log(eps)
    return (1.0 - eps ** power) / power


def radial_factor(p: float, a: float, b: float) -> float:
    """∫_0^inf rho^{2+b-p} e^{-a p rho^2} d rho."""
    m = 3.0 + b - p
    if m <= 0.0:
        raise ValueError(
            f"radial factor diverges at the velocity origin for 3 + b - p = {m:.3g} <= 0"
        )
    if a <= 0.0:
        raise ValueError(f"Gaussian rate a must be positive, got {a}")
    return special.gamma(m / 2.0) / (2.0 * (a * p) ** (m / 2.0))


def _dyadic_levels(lower: float, upper: float) -> int:
    return int(math.ceil(math.log2(upper / lower))) + 1


def flat_log_divergence(r3: float, eps: float, order: int = 8, n_phi: int = 16) -> Tuple[float, float]:
    """(quadrature, closed form) of ∫_{v1<0, |v|<r3, N>=eps} dv/(N|v|) = pi r3^2 log(1/eps).

    v = rho w with w at cosine t to -e1, so N = |v.e1|/|v| = t; t runs over dyadic
    shells toward eps.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"need 0 < eps < 1, got {eps}")
    n = np.array([1.0, 0.0, 0.0])
    t, wt = composite_gauss(dyadic_edges(eps, 1.0, _dyadic_levels(eps, 1.0)), order)
    rho, w_rho = gauss_legendre(order, 0.0, r3)
    phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    v = rho[:, None, None, None] * spherical_directions(-n, tt, pp)[None]
    speed = np.linalg.norm(v, axis=-1)
    grazing = np.abs(v @ n) / speed
    weights = (rho ** 2 * w_rho)[:, None, None] * wt[None, :, None] * (2.0 * math.pi / n_phi)
    value = float(np.sum(weights / (grazing * speed)))
    return value, math.pi * r3 ** 2 * math.log(1.0 / eps)


def log_divergence(r: float, r0: float, eps: float, order: int = 8) -> Tuple[float, float]:
    """(quadrature, closed form) of 2 pi ∫_eps^{r0/2r} ∫_{2rt}^{r0} d rho/(t rho) dt = pi log^2(r0/(2 r eps)).

    Both variables run over dyadic shells toward their singular endpoints.
    """
    upper = r0 / (2.0 * r)
    if not eps < upper:
        raise ValueError(f"need eps < r0/(2r) = {upper:.6g}, got {eps}")
    t, wt = composite_gauss(dyadic_edges(eps, upper, _dyadic_levels(eps, upper)), order)
    inner = np.empty_like(t)
    for i, ti in enumerate(t):
        lower = 2.0 * r * ti
        rho, w_rho = composite_gauss(dyadic_edges(lower, r0, _dyadic_levels(lower, r0)), order)
        inner[i] = np.sum(w_rho / (ti * rho))
    return 2.0 * math.pi * float(np.sum(wt * inner)), math.pi * math.log(upper / eps) ** 2


# --- incoming-ray quadrature over a boundary region ---

@dataclass
class _Region:
    z: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    e_a: np.ndarray
    e_b: np.ndarray


def _region(dom: ConvexDomain, radius: Optional[float], order: int) -> _Region:
    """Boundary nodes of the probed region: D_radius on the flat face, the cap of angle radius on a ball."""
    if isinstance(dom, FlatCap):
        if radius is None and dom.r1 is None:
            raise ValueError("flat cap region needs r1 or an explicit radius")
        z, n, w = dom.disk_quadrature(radius if radius is not None else dom.r1 / 4.0, order, 2 * order)
    elif isinstance(dom, Ball):
        if radius is None:
            z, n, w = dom.boundary_quadrature(order)
        else:
            z, n, w = dom.cap_quadrature(radius, order, 2 * order)
    else:
        raise ValueError(f"no counterexample region for {dom!r}")
    e_a, e_b = orthonormal_frame(n)
    return _Region(z, n, w, e_a, e_b)


def _incoming_directions(region: _Region, t: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Unit incoming directions with n.w = -t, shape (Nz, Nt, Nphi, 3)."""
    t = t[None, :, None, None]
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    c = np.cos(phi)[None, None, :, None]
    sn = np.sin(phi)[None, None, :, None]
    n = region.normals[:, None, None, :]
    return -t * n + s * (c * region.e_a[:, None, None, :] + sn * region.e_b[:, None, None, :])


def _shell_nodes(lo: float, hi: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes in t on [e^-hi, e^-lo] from Gauss in y = -log t, weights including dt = t dy."""
    y, wy = gauss_legendre(order, lo, hi)
    t = np.exp(-y)
    return t, wy * t


def _shell_sum(dom, region, y_edges, n_phi, t_order, integrand) -> np.ndarray:
    """Integrals over y-panels [y_j, y_{j+1}] of ∫ dSigma ∫ dphi ∫ dt integrand(t, chord, region)."""
    phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    out = np.empty(len(y_edges) - 1)
    for j, (lo, hi) in enumerate(zip(y_edges[:-1], y_edges[1:])):
        t, wt = _shell_nodes(lo, hi, t_order)
        omega = _incoming_directions(region, t, phi)
        z = np.broadcast_to(region.z[:, None, None, :], omega.shape)
        chord = dom.exit_time(z, -omega)
        values = integrand(t[None, :, None], chord, omega)
        weights = region.weights[:, None, None] * wt[None, :, None] * (2.0 * math.pi / n_phi)
        out[j] = float(np.sum(weights * values))
    return out


# --- grazing integrals ---

def _radial_rule(v_max: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss rule in rho = u^2 on [0, v_max]; smooths rho^m singularities at 0."""
    u, wu = gauss_legendre(order, 0.0, math.sqrt(v_max))
    return u * u, 2.0 * u * wu


def _grazing_y_edges(eps: float) -> np.ndarray:
    top = -math.log(eps)
    edges = np.arange(0.0, top, LN2)
    return np.concatenate([edges, [top]]) if top - edges[-1] > 1e-12 else np.append(edges[:-1], top)


def _chord_shells(dom: ConvexDomain, p: float, y_edges, region_radius=None, order: int = 8) -> np.ndarray:
    """∫_region ∫ dphi ∫ t^{1-p} chord(z, t, phi) dt per y-panel."""
    region = _region(dom, region_radius, order)
    return _shell_sum(dom, region, y_edges, 2 * order, 8, lambda t, chord, omega: t ** (1.0 - p) * chord)


def flat_grazing_limit(dom: FlatCap, p: float, region_radius: Optional[float] = None, order: int = 8) -> float:
    """eps -> 0 limit of the flat-face chord integral for p < 2, via u = t^{2-p}."""
    if not p < 2.0:
        raise ValueError(f"the flat-face grazing integral diverges for p = {p} >= 2")
    region = _region(dom, region_radius, order)
    phi = 2.0 * math.pi * (np.arange(2 * order) + 0.5) / (2 * order)
    u, wu = composite_gauss(np.linspace(0.0, 1.0, 9), 8)
    t = u ** (1.0 / (2.0 - p))
    omega = _incoming_directions(region, t, phi)
    z = np.broadcast_to(region.z[:, None, None, :], omega.shape)
    chord = dom.exit_time(z, -omega)
    weights = region.weights[:, None, None] * (wu / (2.0 - p))[None, :, None] * (2.0 * math.pi / phi.size)
    return float(np.sum(weights * chord))


def grazing_integral(
    dom: ConvexDomain,
    p: float,
    a: float,
    b: float,
    eps: float,
    method: str = "reduced",
    region_radius: Optional[float] = None,
    order: int = 8,
    v_max: float = 8.0,
) -> float:
    """∫∫_{N >= eps} |grad_x tau|^p |v|^b e^{-a p |v|^2} dx dv.

    The ball covers the whole domain; a flat cap is restricted to footpoints in
    D_{r1/4} of the flat face. "reduced" uses the boundary parameterization with
    the closed-form radial factor; "full" integrates rho, the ray parameter and
    the angles numerically with grad_x tau from the geometry.
    """
    if p < 1.0 or b < 0.0 or not 0.0 < eps < 1.0:
        raise ValueError(f"need p >= 1, b >= 0, 0 < eps < 1; got p={p}, b={b}, eps={eps}")
    if method == "full":
        return _grazing_full(dom, p, a, b, eps, region_radius, order, v_max)
    if method != "reduced":
        raise ValueError(f"unknown grazing method: {method}")
    radial = radial_factor(p, a, b)
    if isinstance(dom, Ball) and region_radius is None:
        return 2.0 * dom.r * dom.surface_area * 2.0 * math.pi * t_factor(p, 2, eps) * radial
    return float(np.sum(_chord_shells(dom, p, _grazing_y_edges(eps), region_radius, order))) * radial


def _grazing_full(dom, p, a, b, eps, region_radius, order, v_max) -> float:
    region = _region(dom, region_radius, order)
    rho, w_rho = _radial_rule(v_max, 2 * order)
    s_nodes, s_weights = gauss_legendre(6, 0.0, 1.0)
    y_edges = _grazing_y_edges(eps)

    def integrand(t, chord, omega):
        # x = z + sigma omega for sigma in (0, chord); dx dv = N |v| dt dv dSigma with dt = dsigma/rho
        total = np.zeros(np.broadcast_shapes(t.shape, chord.shape))
        for sk, wk in zip(s_nodes, s_weights):
            sigma = sk * chord
            x = region.z[:, None, None, :] + sigma[..., None] * omega
            for rk, wr in zip(rho, w_rho):
                v = rk * omega
                grad = np.linalg.norm(dom.grad_x_tau(x, v), axis=-1)
                total += wk * chord * wr * t * rk * rk * grad ** p * rk ** b * math.exp(-a * p * rk * rk)
        return total

    return float(np.sum(_shell_sum(dom, region, y_edges, 2 * order, 6, integrand)))


# --- divergence diagnosis ---

@dataclass
class DivergenceVerdict:
    status: str
    epsilons: List[float]
    values: List[float]
    model: Optional[str] = None
    limit: Optional[float] = None
    q_tail: Optional[float] = None
    diagnostics: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)

    def rows(self) -> List[Dict]:
        return [
            {"epsilon": e, "value": v, "fitted_model": self.model or "", "verdict": self.status}
            for e, v in zip(self.epsilons, self.values)
        ]


def _fit(design: np.ndarray, values: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(np.max(np.abs(design @ coef - values) / np.abs(values)))


def classify(epsilons: Sequence[float], values: Sequence[float]) -> DivergenceVerdict:
    """Diagnose convergence of values(eps) as eps -> 0 from dyadic cutoffs."""
    eps = np.asarray(epsilons, dtype=float)
    vals = np.asarray(values, dtype=float)
    diffs = np.diff(vals)
    verdict = DivergenceVerdict(INCONCLUSIVE, eps.tolist(), vals.tolist())
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.all(np.abs(diffs) <= 1e-14 * scale):
        verdict.status, verdict.limit, verdict.q_tail = CONVERGENT, float(vals[-1]), 0.0
        return verdict

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[1:] / diffs[:-1]
    q = float(np.nanmedian(ratios[-5:]))
    verdict.q_tail = q
    verdict.diagnostics["ratios"] = ratios.tolist()
    if abs(q) < 1.0 - CONVERGENCE_MARGIN:
        verdict.status = CONVERGENT
        verdict.limit = float(vals[-1] + diffs[-1] * q / (1.0 - q))
        return verdict

    growing = diffs[-4:]
    if diffs.size >= 4 and np.all(growing > 0.0):
        L = -np.log(eps)
        ones = np.ones_like(L)
        fits = {
            "log": _fit(np.stack([ones, L], axis=1), vals),
            "log2": _fit(np.stack([ones, L, L * L], axis=1), vals),
            "power": _fit(np.stack([ones, np.exp2(math.log2(q) * np.arange(eps.size))], axis=1), vals),
        }
        verdict.diagnostics["fit_residuals"] = fits
        # simplest growth law that fits
        for model, residual in fits.items():
            if residual <= FIT_TOLERANCE:
                verdict.status, verdict.model = DIVERGENT, model
                return verdict
    log.warning(f"inconclusive divergence fit: q_tail={q:.4f}")
    return verdict


def dyadic_epsilons(k_min: int, k_max: int) -> np.ndarray:
    return 2.0 ** -np.arange(k_min, k_max + 1, dtype=float)


@timed(name="analysis.divergence_scan")
def divergence_scan(
    dom: ConvexDomain,
    p: float,
    a: float,
    b: float,
    k_min: int = 4,
    k_max: int = 14,
    region_radius: Optional[float] = None,
    order: int = 8,
) -> DivergenceVerdict:
    """grazing_integral at eps_k = 2^-k, k = k_min..k_max, and its verdict."""
    eps = dyadic_epsilons(k_min, k_max)
    radial = radial_factor(p, a, b)
    if isinstance(dom, Ball) and region_radius is None:
        values = [2.0 * dom.r * dom.surface_area * 2.0 * math.pi * t_factor(p, 2, e) * radial for e in eps]
    else:
        y_edges = LN2 * np.arange(k_max + 1)
        shells = _chord_shells(dom, p, y_edges, region_radius, order)
        values = list(np.cumsum(shells)[k_min - 1:] * radial)
    verdict = classify(eps, values)
    verdict.diagnostics["p"] = p
    log.info(f"grazing scan {dom!r} p={p}: {verdict.status} (q={verdict.q_tail})")
    return verdict


# --- W^{1,p} of Jg near grazing footpoints ---

def _region_for_data(data: BoundaryData) -> Tuple[Optional[float], float]:
    if isinstance(data, FlatCutoff):
        return data.r1 / 4.0, data.r1 / 2.0
    if isinstance(data, CapCutoff):
        return data.theta1, 0.5
    raise ValueError("the W^{1,p} scan needs flat_cutoff or cap_cutoff data")


def _transition_region(dom: ConvexDomain, data: BoundaryData, order: int) -> _Region:
    """Boundary nodes covering the cutoff support, panels split where the plateau ends."""
    if isinstance(data, FlatCutoff):
        z, n, w = dom.disk_quadrature(data.r1 / 2.0, order, 2 * order, split=data.r1 / 4.0)
    elif isinstance(data, CapCutoff):
        z, n, w = dom.cap_quadrature(data.theta2, order, 2 * order, split=data.theta1)
    else:
        raise ValueError("the W^{1,p} scan needs flat_cutoff or cap_cutoff data")
    e_a, e_b = orthonormal_frame(n)
    return _Region(z, n, w, e_a, e_b)


@timed(name="analysis.w1p_of_Jg_scan")
def w1p_of_Jg_scan(
    dom: ConvexDomain,
    model: HardSphere,
    data: BoundaryData,
    spec: NormSpec,
    k_min: int = 4,
    k_max: int = 14,
    speed_cutoff: Optional[float] = None,
    order: int = 8,
    include_velocity: bool = True,
) -> Dict[str, DivergenceVerdict]:
    """Per-term L^p_alpha integrals of grad Jg over {tau <= 1, |v| < cutoff}.

    The tau and velocity terms run over footpoints on the plateau, where phi = 1 and
    grad_x Jg = -nu (grad_x tau) Jg. The data term e^{-nu tau} grad_x phi(q) vanishes
    there, so it runs over the transition annulus, where grad_x q carries the same 1/t
    grazing factor. Along x = z + t v the footpoint is z, so the t-integral is closed form.
    """
    region_radius, default_cutoff = _region_for_data(data)
    cutoff = speed_cutoff if speed_cutoff is not None else default_cutoff
    p, alpha = spec.p, spec.alpha
    region = _region(dom, region_radius, order)
    annulus = _transition_region(dom, data, order)
    grad_phi = data.tangential_gradient(annulus.z, np.zeros_like(annulus.z))

    edges = dyadic_edges(0.0, cutoff, 24)
    rho, w_rho = composite_gauss(edges, 6)
    nu = model.nu(rho[:, None] * np.array([1.0, 0.0, 0.0]))
    gauss = np.exp(-p * (0.5 - alpha) * rho * rho)
    s_unit, w_unit = gauss_legendre(8, 0.0, 1.0)

    def ray_length(chord):
        return np.minimum(chord[..., None] / rho, 1.0)

    def tau_term(t, chord, omega):
        T = ray_length(chord)
        line = -np.expm1(-p * nu * T) / (p * nu)
        vals = rho ** 3 * t[..., None] * nu ** p * (t[..., None] * rho) ** -p * gauss * line
        return np.sum(w_rho * vals, axis=-1)

    def data_term(t, chord, omega):
        T = ray_length(chord)
        line = -np.expm1(-p * nu * T) / (p * nu)
        g = grad_phi[:, None, None, :]
        vec = g + np.sum(omega * g, axis=-1, keepdims=True) * annulus.normals[:, None, None, :] / t[..., None]
        mag = np.linalg.norm(vec, axis=-1)[..., None]
        vals = rho ** 3 * t[..., None] * (mag * np.exp(-0.5 * rho * rho)) ** p * np.exp(p * alpha * rho * rho) * line
        return np.sum(w_rho * vals, axis=-1)

    def velocity_term(t, chord, omega):
        T = ray_length(chord)
        s = T[..., None] * s_unit
        line = np.sum(T[..., None] * w_unit * s ** p * np.exp(-p * nu[..., None] * s), axis=-1)
        vals = rho ** 3 * t[..., None] * nu ** p * (t[..., None] * rho) ** -p * gauss * line
        return np.sum(w_rho * vals, axis=-1)

    terms = {"tau": tau_term, "data": data_term}
    if include_velocity:
        terms["velocity"] = velocity_term
    eps = dyadic_epsilons(k_min, k_max)
    y_edges = LN2 * np.arange(k_max + 1)
    verdicts = {}
    for name, integrand in terms.items():
        shells = _shell_sum(dom, annulus if name == "data" else region, y_edges, 2 * order, 8, integrand)
        verdicts[name] = classify(eps, np.cumsum(shells)[k_min - 1:])
        log.info(f"W1p scan {dom!r} p={p} term={name}: {verdicts[name].status}")
    return verdicts


# --- eta gap ---

@timed(name="analysis.eta_gap_scan")
def eta_gap_scan(
    model: HardSphere,
    quad: VelocityQuadrature,
    r0: float,
    n_radial: int = 11,
    n_angle: int = 7,
    dom_kind: str = "flat",
    normal: Sequence[float] = (1.0, 0.0, 0.0),
) -> Dict:
    """nu(v) M(v) - ∫_{n.v*<0} k(v, v*) M(v*) dv* over |v| <= r0, v at angle [0, pi/2] from -n.

    The certified bound subtracts twice the change under a refined quadrature.
    """
    if not r0 > 0.0:
        raise ValueError(f"r0 must be positive, got {r0}")
    n = np.asarray(normal, dtype=float)
    e_a, _ = orthonormal_frame(n)
    fine = quad.refined()
    speeds = np.linspace(0.0, r0, n_radial)
    angles = np.linspace(0.0, 0.5 * math.pi, n_angle)
    gap = np.empty((n_radial, n_angle))
    error = np.empty((n_radial, n_angle))
    for i, s in enumerate(speeds):
        for j, beta in enumerate(angles):
            v = s * (-math.cos(beta) * n + math.sin(beta) * e_a)
            loss = float(model.nu(v) * maxwellian(v))
            coarse = half_space_gain(model, v, n, quad)
            refined = half_space_gain(model, v, n, fine)
            gap[i, j] = loss - refined
            error[i, j] = abs(refined - coarse)
    lower = gap - 2.0 * error
    i_min, j_min = np.unravel_index(np.argmin(lower), lower.shape)
    radial_steps = np.abs(np.diff(gap, axis=0))
    midpoint = 0.5 * (speeds[:-1] + speeds[1:])
    mid_gap = np.array([
        float(model.nu(s * -n) * maxwellian(s * -n)) - half_space_gain(model, s * -n, n, fine) for s in midpoint
    ])
    neighbours = 0.5 * (gap[:-1, 0] + gap[1:, 0])
    continuity = bool(np.all(np.abs(mid_gap - neighbours) <= radial_steps[:, 0] + 2.0 * error[:-1, 0] + 1e-12))
    result = {
        "dom_kind": dom_kind,
        "r0": r0,
        "eta_certified": float(lower[i_min, j_min]),
        "min_gap": float(gap[i_min, j_min]),
        "min_location": {"speed": float(speeds[i_min]), "angle": float(angles[j_min])},
        "limit_value": float(gap[0, 0]),
        "max_quadrature_error": float(np.max(error)),
        "continuity_ok": continuity,
        "speeds": speeds.tolist(),
        "angles": angles.tolist(),
        "gap": gap.tolist(),
    }
    log.info(f"eta gap ({dom_kind}, r0={r0}): certified {result['eta_certified']:.5f}, limit {result['limit_value']:.6f}")
    return result


# --- change of variables ---

def _ray_integral(dom, fn, base, direction, backward_of, lq: LineQuadrature):
    """∫_0^{tau(base, backward_of)} fn(base + t direction, direction, t) dt for unit-rate panels."""
    tau = dom.exit_time(base, backward_of)
    t, w = lq.batch(tau, np.ones_like(tau))
    points = base[:, None, :] + t[..., None] * direction[:, None, :]
    return np.sum(w * fn(points, np.broadcast_to(direction[:, None, :], points.shape), t), axis=-1)


def _test_h(x, v, s):
    return np.exp(-np.sum(v * v, axis=-1)) * (1.0 + x[..., 0] ** 2) * np.exp(-s)


def _test_f(x, v):
    return np.exp(-np.sum(v * v, axis=-1)) * (1.0 + np.sum(x * x, axis=-1))


def _compare(lhs: np.ndarray, rhs: np.ndarray, scale_l: float, scale_r: float) -> Dict:
    a = scale_l * float(np.mean(lhs))
    b = scale_r * float(np.mean(rhs))
    se_a = scale_l * float(np.std(lhs, ddof=1)) / math.sqrt(lhs.size)
    se_b = scale_r * float(np.std(rhs, ddof=1)) / math.sqrt(rhs.size)
    combined = math.hypot(se_a, se_b)
    z = abs(a - b) / combined if combined > 0.0 else 0.0
    return {"lhs": a, "lhs_se": se_a, "rhs": b, "rhs_se": se_b, "z": z, "passed": z <= 3.0}


@timed(name="analysis.change_of_variables_check")
def change_of_variables_check(
    dom: ConvexDomain,
    h: Callable = _test_h,
    n_samples: int = 20000,
    seed: int = 7,
    v_max: float = 4.0,
    lq: LineQuadrature = LineQuadrature(),
) -> Dict:
    """∫∫∫_0^{tau(x,v)} h(x,v,s) ds against ∫∫∫_0^{tau(y,-u)} h(y+tu,u,t) dt, independent samples."""
    rng = np.random.default_rng(seed)
    scale = dom.volume * _ball_volume(v_max)

    x = dom.sample_interior(rng, n_samples)
    v = _sample_shell(rng, n_samples, 0.0, v_max)
    tau = dom.exit_time(x, v)
    s, w = lq.batch(tau, np.ones_like(tau))
    lhs = np.sum(w * h(np.broadcast_to(x[:, None, :], s.shape + (3,)), np.broadcast_to(v[:, None, :], s.shape + (3,)), s), axis=-1)

    y = dom.sample_interior(rng, n_samples)
    u = _sample_shell(rng, n_samples, 0.0, v_max)
    rhs = _ray_integral(dom, h, y, u, -u, lq)
    return _compare(lhs, rhs, scale, scale)


@timed(name="analysis.boundary_change_of_variables_check")
def boundary_change_of_variables_check(
    dom: ConvexDomain,
    f: Callable = _test_f,
    n_samples: int = 20000,
    seed: int = 7,
    v_max: float = 4.0,
    lq: LineQuadrature = LineQuadrature(),
) -> Dict:
    """∫_Omega∫ f dx dv against ∫_bd ∫_{n.v<0} ∫_0^{tau(z,-v)} f(z+tv, v) dt N|v| dv dSigma."""
    rng = np.random.default_rng(seed)
    x = dom.sample_interior(rng, n_samples)
    v = _sample_shell(rng, n_samples, 0.0, v_max)
    lhs = f(x, v)

    z, n = dom.sample_boundary(rng, n_samples)
    u = _sample_shell(rng, n_samples, 0.0, v_max)
    incoming = np.sum(u * n, axis=-1) < 0.0
    flux = np.where(incoming, -np.sum(u * n, axis=-1), 0.0)
    line = np.zeros(n_samples)
    if np.any(incoming):
        line[incoming] = _ray_integral(dom, lambda p, d, t: f(p, d), z[incoming], u[incoming], -u[incoming], lq)
    rhs = flux * line
    return _compare(lhs, rhs, dom.volume * _ball_volume(v_max), dom.surface_area * _ball_volume(v_max))
