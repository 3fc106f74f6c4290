"""
Neumann Series Solver
Collocation iteration of f = Jg + S K f and an independent backward random-walk
Monte Carlo estimator of the same series.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import grid_lp_norm, weighted_sup
from .collision import HardSphere, VelocityQuadrature
from .geometry import Ball, ConvexDomain
from .grids import VGrid, XGrid
from .logging_config import get_logger, timed
from .transport import LineQuadrature, apply_J

log = get_logger("solver")

STENCIL_CACHE_LIMIT = 20_000_000
GAIN_BLOCK_ENTRIES = 2_000_000
ROULETTE_SURVIVAL = 0.5
ROUNDING = 1e-12


class NonContractiveError(RuntimeError):
    """The Neumann increments stopped decaying."""


class GridResolutionError(RuntimeError):
    """The collocation grid cannot represent the free-streaming term."""


def resolve_workers(workers: int) -> int:
    return workers if workers and workers > 0 else (os.cpu_count() or 1)


@dataclass
class PhaseField:
    """Values of a phase-space function on an x-grid times v-grid."""

    xgrid: XGrid
    vgrid: VGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.xgrid.size, self.vgrid.size):
            raise ValueError(
                f"field shape {self.values.shape} does not match grid ({self.xgrid.size}, {self.vgrid.size})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def interpolate(self, x, v) -> np.ndarray:
        """Multilinear interpolation in both x and v; zero beyond v_max."""
        x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
        ix, wx = self.xgrid.stencil(x)
        iv, wv = self.vgrid.stencil(v)
        gathered = self.values[ix[..., :, None], iv[..., None, :]]
        return np.sum(gathered * wx[..., :, None] * wv[..., None, :], axis=(-2, -1))

    def resample_x(self, xgrid: XGrid) -> "PhaseField":
        """The field interpolated onto another x-grid, keeping the v-grid."""
        index, weights = self.xgrid.stencil(xgrid.nodes)
        values = np.sum(self.values[index] * weights[..., None], axis=1)
        return PhaseField(xgrid, self.vgrid, values)

    def lp_norm(self, p: float, alpha: float) -> float:
        return grid_lp_norm(self.values, self.xgrid.weights, self.vgrid, p, alpha)

    def sup_norm(self, alpha: float) -> float:
        return weighted_sup(self.values, self.vgrid, alpha)


@dataclass
class SolveReport:
    iterations: int = 0
    increments: List[float] = field(default_factory=list)
    ratios: List[float] = field(default_factory=list)
    jg_norm: float = 0.0
    residual: float = 0.0
    interpolation_estimate: float = 0.0
    converged: bool = False

    @property
    def ratio_max(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["ratio_max"] = self.ratio_max
        return data


class CollocationOperator:
    """The discrete S K on fixed grids: K as a dense velocity matrix, S by ray stencils.

    K acting on Jg does not go through the v-grid: Jg is evaluated at the
    quadrature nodes directly (see gain_on_data and evaluate).
    """

    def __init__(
        self,
        dom: ConvexDomain,
        model: HardSphere,
        xgrid: XGrid,
        vgrid: VGrid,
        quad: VelocityQuadrature,
        lq: LineQuadrature = LineQuadrature(),
        workers: int = 1,
    ):
        self.dom = dom
        self.model = model
        self.xgrid = xgrid
        self.vgrid = vgrid
        self.quad = quad
        self.lq = lq
        self.workers = resolve_workers(workers)
        self.nu = model.nu(vgrid.nodes)
        self.kmatrix, self.kmass = self._build_kmatrix()
        self._star: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._stencils: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._cached_entries = 0

    @timed(name="solver.build_kmatrix")
    def _build_kmatrix(self) -> Tuple[np.ndarray, np.ndarray]:
        """Rows of K on the v-grid and their row masses sum_q w_q k(v_i, v*_q)."""
        n = self.vgrid.size
        matrix = np.zeros((n, n))
        mass = np.zeros(n)
        if self.model.gain_scale == 0.0:
            return matrix, mass
        for i, v in enumerate(self.vgrid.nodes):
            nodes, weights = self.quad.rule(v)
            kw = weights * self.model.kernel(v, nodes)
            index, iw = self.vgrid.stencil(nodes)
            matrix[i] = np.bincount(index.ravel(), weights=(kw[:, None] * iw).ravel(), minlength=n)
            mass[i] = np.sum(kw)
        return matrix, mass

    def _star_rule(self) -> Tuple[np.ndarray, np.ndarray]:
        """The origin-centred velocity rule with k(v_i, .) folded into its weights; built on first use."""
        if self._star is not None:
            return self._star
        nodes, weights = self.quad.rule(np.zeros(3))
        matrix = np.zeros((self.vgrid.size, nodes.shape[0]))
        if self.model.gain_scale == 0.0:
            self._star = (nodes, matrix)
            return self._star
        for i, v in enumerate(self.vgrid.nodes):
            apart = np.sum((nodes - v) ** 2, axis=-1) > 0.0
            matrix[i, apart] = weights[apart] * self.model.kernel(v, nodes[apart])
        self._star = (nodes, matrix)
        return self._star

    def _map(self, fn: Callable, items) -> None:
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(fn, items))
        else:
            for item in items:
                fn(item)

    def _stencil(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        cached = self._stencils.get(i)
        if cached is not None:
            return cached
        v = self.vgrid.nodes[i]
        x = self.xgrid.nodes
        tau = self.dom.exit_time(x, v)
        s, w = self.lq.batch(tau, self.nu[i])
        points = x[:, None, :] - s[..., None] * v
        index, iw = self.xgrid.stencil(points)
        weights = (w * np.exp(-self.nu[i] * s))[..., None] * iw
        stencil = (index.reshape(x.shape[0], -1), weights.reshape(x.shape[0], -1))
        if self._cached_entries + stencil[0].size <= STENCIL_CACHE_LIMIT:
            self._stencils[i] = stencil
            self._cached_entries += stencil[0].size
        return stencil

    def apply_K(self, values: np.ndarray) -> np.ndarray:
        return values @ self.kmatrix.T

    def apply_S(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)

        def column(i):
            index, weights = self._stencil(i)
            out[:, i] = np.sum(values[index, i] * weights, axis=1)

        self._map(column, range(values.shape[1]))
        return out

    def iterate(self, values: np.ndarray) -> np.ndarray:
        """One application of S K."""
        return self.apply_S(self.apply_K(values))

    def jg(self, data: Callable) -> np.ndarray:
        x = self.xgrid.nodes[:, None, :]
        v = self.vgrid.nodes[None, :, :]
        return apply_J(self.dom, self.model, data, x, v)

    @timed(name="solver.gain_on_data")
    def gain_on_data(self, data: Callable, x: Optional[np.ndarray] = None) -> np.ndarray:
        """K Jg at x (default: the x-nodes) for every v-node, shape (n_x, n_v).

        Jg is evaluated on the origin-centred rule rather than interpolated
        from the v-grid. The kernel singularity at v* = v_i is subtracted and
        its mass restored from the centred rule of the kmatrix row.
        """
        x = self.xgrid.nodes if x is None else np.asarray(x, dtype=float)
        out = np.zeros((x.shape[0], self.vgrid.size))
        if self.model.gain_scale == 0.0:
            return out
        star_nodes, star_matrix = self._star_rule()
        here = apply_J(self.dom, self.model, data, x[:, None, :], self.vgrid.nodes[None, :, :])
        correction = self.kmass - np.sum(star_matrix, axis=1)
        rows = max(1, GAIN_BLOCK_ENTRIES // star_nodes.shape[0])

        def block(start):
            stop = start + rows
            sampled = apply_J(self.dom, self.model, data, x[start:stop, None, :], star_nodes[None, :, :])
            out[start:stop] = sampled @ star_matrix.T + here[start:stop] * correction

        self._map(block, range(0, x.shape[0], rows))
        return out

    def evaluate(self, data: Callable, collided: PhaseField, x, v) -> float:
        """f(x, v) off the grid: one more application of f = Jg + S K f.

        K Jg along the ray uses Jg at the centred quadrature nodes; only the
        collided part is interpolated.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        value = float(apply_J(self.dom, self.model, data, x, v))
        if self.model.gain_scale == 0.0 or not np.any(v):
            return value
        nu = float(self.model.nu(v))
        tau = float(self.dom.exit_time(x[None, :], v[None, :])[0])
        s, w = self.lq.nodes(tau, nu)
        y = x - s[:, None] * v
        nodes, weights = self.quad.rule(v)
        kw = weights * self.model.kernel(v, nodes)
        gain = apply_J(self.dom, self.model, data, y[:, None, :], nodes[None, :, :]) @ kw
        gain += collided.interpolate(y[:, None, :], nodes[None, :, :]) @ kw
        return value + float(np.sum(w * np.exp(-nu * s) * gain))


def build_operator(dom, model, grid_spec, quad, lq=None, workers: int = 1) -> CollocationOperator:
    xgrid = XGrid(dom, grid_spec.n_x)
    vgrid = VGrid.from_spec(grid_spec, quad.v_max)
    return CollocationOperator(dom, model, xgrid, vgrid, quad, lq or LineQuadrature(), workers)


def iterate_term(
    dom: ConvexDomain,
    model: HardSphere,
    field: PhaseField,
    p: float,
    alpha: float,
    quad: Optional[VelocityQuadrature] = None,
    operator: Optional[CollocationOperator] = None,
) -> Tuple[PhaseField, float]:
    """(S K field, its L^p_alpha grid norm)."""
    if operator is None:
        operator = CollocationOperator(dom, model, field.xgrid, field.vgrid, quad or VelocityQuadrature())
    nxt = PhaseField(field.xgrid, field.vgrid, operator.iterate(field.values))
    return nxt, nxt.lp_norm(p, alpha)


def interpolation_estimate(operator: CollocationOperator, data: Callable, gain: np.ndarray, n_probes: int, seed: int) -> float:
    """Relative sup error of x-interpolating K Jg at random interior points."""
    scale = float(np.max(np.abs(gain)))
    if scale == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = operator.dom.sample_interior(rng, n_probes)
    cols = rng.integers(0, operator.vgrid.size, n_probes)
    index, weights = operator.xgrid.stencil(x)
    approx = np.sum(gain[index, cols[:, None]] * weights, axis=-1)
    exact = operator.gain_on_data(data, x)[np.arange(n_probes), cols]
    return float(np.max(np.abs(approx - exact)) / scale)


@timed(name="solver.neumann_solve")
def neumann_solve(
    dom: ConvexDomain,
    model: HardSphere,
    data: Callable,
    grid_spec,
    p: float,
    alpha: float,
    tol: float = 1e-6,
    max_iter: int = 30,
    quad: Optional[VelocityQuadrature] = None,
    lq: Optional[LineQuadrature] = None,
    workers: int = 1,
    interp_tol: float = 0.25,
    n_probes: int = 200,
    seed: int = 7,
    operator: Optional[CollocationOperator] = None,
) -> Tuple[PhaseField, SolveReport]:
    """Sum the Neumann series sum_i (S K)^i Jg on the collocation grid.

    The first collided term S K Jg takes K Jg from gain_on_data; later terms
    use the kmatrix. Stops once a term is below tol times Jg in both the sup
    and the L^p_alpha norm.
    """
    if operator is None:
        operator = build_operator(dom, model, grid_spec, quad or VelocityQuadrature(), lq, workers)
    report = SolveReport()
    jg = operator.jg(data)
    gain = operator.gain_on_data(data)
    report.jg_norm = grid_lp_norm(jg, operator.xgrid.weights, operator.vgrid, p, alpha)
    report.interpolation_estimate = interpolation_estimate(operator, data, gain, n_probes, seed)
    if report.interpolation_estimate > interp_tol:
        raise GridResolutionError(
            f"interpolation error estimate {report.interpolation_estimate:.3g} exceeds {interp_tol}"
        )
    if report.interpolation_estimate > 0.5 * interp_tol:
        log.warning(f"interpolation error estimate {report.interpolation_estimate:.3g} is large")

    jg_sup = weighted_sup(jg, operator.vgrid, alpha)
    first = operator.apply_S(gain) if np.any(gain) else np.zeros_like(gain)
    total = jg.copy()
    term = first
    previous = report.jg_norm
    climbing = 0
    for i in range(1, max_iter + 1):
        if i > 1:
            term = operator.iterate(term)
        increment = grid_lp_norm(term, operator.xgrid.weights, operator.vgrid, p, alpha)
        ratio = increment / previous if previous > 0.0 else 0.0
        total += term
        report.iterations = i
        report.increments.append(increment)
        report.ratios.append(ratio)
        log.debug(f"Neumann term {i}: norm={increment:.6g}, ratio={ratio:.4f}")
        climbing = climbing + 1 if ratio >= 1.0 else 0
        if climbing >= 3:
            raise NonContractiveError(f"increment ratio >= 1 for 3 consecutive terms (last {ratio:.4f})")
        if weighted_sup(term, operator.vgrid, alpha) <= tol * jg_sup and increment <= tol * report.jg_norm:
            report.converged = True
            break
        previous = increment

    collided = total - jg
    residual = collided - first - operator.iterate(collided)
    norm = report.jg_norm if report.jg_norm > 0.0 else 1.0
    report.residual = grid_lp_norm(residual, operator.xgrid.weights, operator.vgrid, p, alpha) / norm
    log.info(
        f"Neumann solve: {report.iterations} terms, ratio_max={report.ratio_max:.4f}, "
        f"residual={report.residual:.3g}, converged={report.converged}"
    )
    return PhaseField(operator.xgrid, operator.vgrid, total), report


def second_iterate(operator: CollocationOperator, values: np.ndarray) -> np.ndarray:
    """K S K applied to a grid field."""
    return operator.apply_K(operator.iterate(values))


@timed(name="solver.contraction_scan")
def contraction_scan(
    model: HardSphere,
    radii: Sequence[float],
    grid_spec,
    quad: VelocityQuadrature,
    p: float = 1.0,
    alpha: float = 0.0,
    workers: int = 1,
) -> Dict:
    """Scaling of ||S K h|| / ||h|| and ||K S K h||_C / ||h||_C with the ball radius."""
    rows = []
    for r in radii:
        dom = Ball(r)
        op = build_operator(dom, model, grid_spec, quad, workers=workers)
        speed2 = np.sum(op.vgrid.nodes ** 2, axis=-1)
        h = np.broadcast_to(np.exp(-0.5 * speed2), (op.xgrid.size, op.vgrid.size)).copy()
        ratio = grid_lp_norm(op.iterate(h), op.xgrid.weights, op.vgrid, p, alpha) / grid_lp_norm(
            h, op.xgrid.weights, op.vgrid, p, alpha
        )
        weight = np.broadcast_to(np.exp(-alpha * speed2), h.shape).copy()
        second = weighted_sup(second_iterate(op, weight), op.vgrid, alpha) / weighted_sup(weight, op.vgrid, alpha)
        rows.append({"radius": r, "diam": dom.diam, "ratio": ratio, "second_iterate": second})
        log.info(f"r={r}: ratio={ratio:.5g}, second iterate={second:.5g}")
    diam = np.array([row["diam"] for row in rows])
    ratio = np.array([row["ratio"] for row in rows])
    slope = float(np.polyfit(np.log(diam), np.log(ratio), 1)[0]) if len(rows) > 1 else math.nan
    return {"rows": rows, "slope": slope}


def _run_block(dom, model, data, x, v, n, seed, block, max_depth, roulette_depth):
    rng = np.random.default_rng([seed, block])
    X = np.tile(x, (n, 1))
    V = np.tile(v, (n, 1))
    W = np.ones(n)
    score = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for depth in range(max_depth):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xa, va, wa = X[idx], V[idx], W[idx]
        nu = model.nu(va)
        speed = np.sqrt(np.sum(va * va, axis=-1))
        moving = speed > 0.0
        tau = np.full(idx.size, np.inf)
        direct = np.zeros(idx.size)
        if np.any(moving):
            t, q = dom.footpoint(xa[moving], va[moving])
            tau[moving] = t
            direct[moving] = np.exp(-nu[moving] * t) * data(q, va[moving])
        score[idx] += wa * direct

        # collision site from the exponential law truncated at tau
        survive = -np.expm1(-nu * tau)
        s = -np.log1p(-rng.random(idx.size) * survive) / nu
        x_new = xa - s[:, None] * va

        # v* = v + r w, w uniform, r Rayleigh(sqrt 2): a Gaussian proposal around v
        # standing in for |k|, with weight k / density = k 8 pi r e^{r^2/4}
        omega = rng.standard_normal((idx.size, 3))
        omega /= np.linalg.norm(omega, axis=-1, keepdims=True)
        r = np.sqrt(-4.0 * np.log1p(-rng.random(idx.size)))
        r = np.where(r > 0.0, r, 1e-12)
        v_new = va + r[:, None] * omega
        k = model.kernel(va, v_new)
        wa = wa * survive / nu * k * 8.0 * math.pi * r * np.exp(0.25 * r * r)

        if depth + 1 >= roulette_depth:
            keep = rng.random(idx.size) < ROULETTE_SURVIVAL
            wa = np.where(keep, wa / ROULETTE_SURVIVAL, 0.0)
        X[idx], V[idx], W[idx] = x_new, v_new, wa
        alive[idx] = wa != 0.0
    mean = float(np.mean(score))
    return n, mean, float(np.sum((score - mean) ** 2))


@timed(name="solver.mc_solve_point")
def mc_solve_point(
    dom: ConvexDomain,
    model: HardSphere,
    data: Callable,
    x,
    v,
    n_paths: int,
    seed: int,
    workers: int = 1,
    block_size: int = 4096,
    max_depth: int = 64,
    roulette_depth: int = 4,
) -> Tuple[float, float]:
    """(estimate, std_error) of f(x, v) by backward random walks with expected-value scoring."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not dom.contains(x[None, :], tol=1e-10 * dom.diam)[0]:
        raise ValueError("point outside the domain")
    sizes = [min(block_size, n_paths - start) for start in range(0, n_paths, block_size)]

    def run(block):
        return _run_block(dom, model, data, x, v, sizes[block], seed, block, max_depth, roulette_depth)

    with ThreadPoolExecutor(max_workers=resolve_workers(workers)) as pool:
        results = list(pool.map(run, range(len(sizes))))

    # Chan's pairwise combination, in block order
    count, mean, m2 = 0, 0.0, 0.0
    for n_b, mean_b, m2_b in results:
        total = count + n_b
        delta = mean_b - mean
        mean += delta * n_b / total
        m2 += m2_b + delta * delta * count * n_b / total
        count = total
    variance = m2 / (count - 1) if count > 1 else 0.0
    return mean, math.sqrt(variance / count)


def cross_validate(
    operator: CollocationOperator,
    field: PhaseField,
    jg: np.ndarray,
    data: Callable,
    n_probes: int,
    n_paths: int,
    seed: int,
    workers: int = 1,
    block_size: int = 4096,
) -> List[Dict]:
    """Compare the collocation solution with Monte Carlo at random sample points, within 3 sigma.

    The deterministic value at a sample point comes from operator.evaluate. A zero
    standard error (no gain) leaves only a rounding allowance.
    """
    dom = operator.dom
    rng = np.random.default_rng(seed)
    xs = dom.sample_interior(rng, n_probes)
    speeds = field.vgrid.speeds
    candidates = np.flatnonzero((speeds > 0.3) & (speeds < 3.0))
    if candidates.size == 0:
        raise ValueError("no v-grid speed in (0.3, 3) to sample")
    cols = rng.choice(candidates, n_probes)
    collided = PhaseField(field.xgrid, field.vgrid, field.values - jg)
    rows = []
    for k, (x, col) in enumerate(zip(xs, cols)):
        v = field.vgrid.nodes[col]
        det = operator.evaluate(data, collided, x, v)
        est, err = mc_solve_point(dom, operator.model, data, x, v, n_paths, seed + k, workers, block_size)
        gap = abs(det - est)
        passed = gap <= max(3.0 * err, ROUNDING * abs(det))
        rows.append({
            "x": x.tolist(), "v": v.tolist(), "deterministic": det, "mc": est, "std_error": err,
            "z": gap / err if err > 0.0 else 0.0, "passed": passed,
        })
        log.debug(f"point {k}: det={det:.6g}, mc={est:.6g} +- {err:.2g}")
    return rows
