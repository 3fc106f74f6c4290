"""
Tests for exit times, footpoints and exit-time derivatives.
"""
import math
import pytest
import numpy as np

from src.geometry import (
    PLANE_FACE,
    SPHERE_FACE,
    Ball,
    FlatCap,
    GrazingSingularityError,
    build_domain,
)
from src.config import BallSpec, FlatCapSpec

E1 = np.array([1.0, 0.0, 0.0])
ORIGIN = np.zeros(3)


def _random_velocities(rng, n, lo=0.1, hi=3.0):
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    return u * rng.uniform(lo, hi, n)[:, None]


class TestBallExitTime:
    """Closed-form exit times of the ball."""

    def test_center(self, unit_ball):
        assert unit_ball.exit_time(ORIGIN, E1) == pytest.approx(1.0, abs=1e-15)

    def test_offset(self, unit_ball):
        assert unit_ball.exit_time(0.5 * E1, E1) == pytest.approx(1.5, abs=1e-14)

    def test_footpoint(self, unit_ball):
        tau, q = unit_ball.footpoint(0.5 * E1, E1)
        np.testing.assert_allclose(q, -E1, atol=1e-14)

    def test_speed_scaling(self, unit_ball):
        assert unit_ball.exit_time(ORIGIN, 2.0 * E1) == pytest.approx(0.5)

    def test_grad_x_tau(self, unit_ball):
        np.testing.assert_allclose(unit_ball.grad_x_tau(ORIGIN, E1), E1, atol=1e-14)

    def test_grad_v_bound(self, unit_ball):
        assert unit_ball.grad_v_tau_bound(ORIGIN, E1) == pytest.approx(1.0, abs=1e-14)

    def test_batched_shapes(self, small_ball, rng):
        x = small_ball.sample_interior(rng, 12).reshape(3, 4, 3)
        v = _random_velocities(rng, 12).reshape(3, 4, 3)
        assert small_ball.exit_time(x, v).shape == (3, 4)


class TestGrazingFactor:
    """N(z, v) on the unit sphere."""

    def test_normal_incidence(self, unit_ball):
        assert unit_ball.grazing_factor(E1, -E1) == pytest.approx(1.0)

    def test_tangent(self, unit_ball):
        assert unit_ball.grazing_factor(E1, np.array([0.0, 1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)

    def test_oblique(self, unit_ball):
        value = unit_ball.grazing_factor(E1, np.array([-1.0, 1.0, 0.0]))
        assert value == pytest.approx(2.0 ** -0.5)

    def test_zero_velocity(self, unit_ball):
        with pytest.raises(ValueError, match="v = 0"):
            unit_ball.grazing_factor(E1, ORIGIN)


class TestValidation:
    """Invalid arguments."""

    def test_zero_velocity(self, unit_ball):
        with pytest.raises(ValueError, match="v = 0"):
            unit_ball.exit_time(ORIGIN, ORIGIN)

    def test_point_outside(self, unit_ball):
        with pytest.raises(ValueError, match="outside"):
            unit_ball.exit_time(2.0 * E1, E1)

    def test_bad_shape(self, unit_ball):
        with pytest.raises(ValueError, match="trailing dimension"):
            unit_ball.exit_time(np.zeros(2), np.ones(2))

    def test_grazing_footpoint_raises(self, unit_ball):
        with pytest.raises(GrazingSingularityError):
            unit_ball.grad_x_tau(E1, np.array([0.0, 1.0, 0.0]))

    def test_grazing_error_is_value_error(self):
        assert issubclass(GrazingSingularityError, ValueError)

    def test_bad_radius(self):
        with pytest.raises(ValueError, match="positive"):
            Ball(0.0)

    def test_bad_flat_cap(self):
        with pytest.raises(ValueError, match="0 < a < R"):
            FlatCap(1.0, 1.5)
        with pytest.raises(ValueError, match="R >= r1 \\+ a"):
            FlatCap(1.0, 0.25, 0.9)


class TestFlatCap:
    """Exit through the flat face and the spherical face."""

    def test_flat_face_footpoint(self, flat_cap):
        tau, q = flat_cap.footpoint(np.array([-0.1, 0.0, 0.0]), -E1)
        assert tau == pytest.approx(0.1)
        np.testing.assert_allclose(q, ORIGIN, atol=1e-15)
        assert flat_cap.trace_face(np.array([-0.1, 0.0, 0.0]), -E1) == PLANE_FACE

    def test_sphere_face_footpoint(self, flat_cap):
        x = np.array([-0.1, 0.0, 0.0])
        assert flat_cap.exit_time(x, E1) == pytest.approx(1.15)
        assert flat_cap.trace_face(x, E1) == SPHERE_FACE

    def test_oblique_gradient(self, flat_cap):
        theta = 0.3
        v = np.array([-math.cos(theta), math.sin(theta), 0.0])
        grad = flat_cap.grad_x_tau(np.array([-0.2, 0.0, 0.0]), v)
        assert np.linalg.norm(grad) == pytest.approx(1.0 / math.cos(theta), rel=1e-12)
        np.testing.assert_allclose(grad / np.linalg.norm(grad), -E1, atol=1e-14)

    def test_chord_unbounded(self, flat_cap):
        assert math.isinf(flat_cap.chord_bound())
        ratios = [
            float(flat_cap.chord_ratio(ORIGIN, np.array([-g, math.sqrt(1.0 - g * g), 0.0])))
            for g in (1e-2, 1e-4)
        ]
        assert ratios[1] > 50.0 * ratios[0]

    def test_flat_radius(self, flat_cap):
        assert flat_cap.flat_radius == pytest.approx(math.sqrt(1.0 - 0.0625))

    def test_normal_on_both_faces(self, flat_cap):
        np.testing.assert_allclose(flat_cap.normal(np.array([0.0, 0.2, 0.1])), E1)
        np.testing.assert_allclose(flat_cap.normal(np.array([-1.25, 0.0, 0.0])), -E1)


class TestOracles:
    """Exit-time identities on random samples, for both domains."""

    @pytest.fixture(params=["ball", "flat_cap"])
    def domain(self, request, small_ball, flat_cap):
        return small_ball if request.param == "ball" else flat_cap

    def test_bisection_agrees(self, domain, rng):
        x = domain.sample_interior(rng, 500)
        v = _random_velocities(rng, 500)
        tau = domain.exit_time(x, v)
        speed = np.linalg.norm(v, axis=-1)
        assert np.max(np.abs(tau - domain.exit_time_bisect(x, v)) * speed) <= 1e-9 * domain.diam

    def test_footpoint_identity(self, domain, rng):
        x = domain.sample_interior(rng, 500)
        v = _random_velocities(rng, 500)
        tau, q = domain.footpoint(x, v)
        np.testing.assert_allclose(x - tau[:, None] * v, q, atol=1e-12)

    def test_tau_range(self, domain, rng):
        x = domain.sample_interior(rng, 500)
        v = _random_velocities(rng, 500)
        tau = domain.exit_time(x, v)
        speed = np.linalg.norm(v, axis=-1)
        assert np.all(tau > 0.0)
        assert np.all(tau * speed <= domain.diam * (1.0 + 1e-12))

    def test_semigroup(self, domain, rng):
        x = domain.sample_interior(rng, 500)
        v = _random_velocities(rng, 500)
        tau = domain.exit_time(x, v)
        s = 0.5 * tau
        shifted = domain.exit_time(x - s[:, None] * v, v)
        np.testing.assert_allclose(shifted, tau - s, atol=1e-10 * domain.diam)

    def test_grad_x_tau_norm_law(self, domain, rng):
        x = domain.sample_interior(rng, 500)
        v = _random_velocities(rng, 500)
        tau, q, n = domain.footpoint_normal(x, v)
        speed = np.linalg.norm(v, axis=-1)
        grazing = np.abs(np.sum(n * v, axis=-1)) / speed
        keep = grazing > 1e-3
        grad = domain.grad_x_tau(x[keep], v[keep])
        np.testing.assert_allclose(np.linalg.norm(grad, axis=-1) * grazing[keep] * speed[keep], 1.0, rtol=1e-12)

    def test_grad_v_tau_bound_attained(self, domain, rng):
        x = domain.sample_interior(rng, 200)
        v = _random_velocities(rng, 200)
        _, _, n = domain.footpoint_normal(x, v)
        grazing = np.abs(np.sum(n * v, axis=-1)) / np.linalg.norm(v, axis=-1)
        keep = grazing > 0.1
        exact = np.linalg.norm(domain.grad_v_tau(x[keep], v[keep]), axis=-1)
        np.testing.assert_allclose(exact, domain.grad_v_tau_bound(x[keep], v[keep]), rtol=1e-12)

    def test_bound_scaling(self, domain, rng):
        x = domain.sample_interior(rng, 200)
        v = _random_velocities(rng, 200, 0.5, 2.0)
        _, _, n = domain.footpoint_normal(x, v)
        keep = np.abs(np.sum(n * v, axis=-1)) / np.linalg.norm(v, axis=-1) > 0.1
        base = domain.grad_v_tau_bound(x[keep], v[keep])
        np.testing.assert_allclose(domain.grad_v_tau_bound(x[keep], 2.0 * v[keep]), base / 4.0, rtol=1e-12)


class TestBallChords:
    """Incoming chords of the sphere have length 2r N."""

    def test_chord_ratio_is_diameter(self, small_ball, rng):
        z, n = small_ball.sample_boundary(rng, 1000)
        v = _random_velocities(rng, 1000)
        v = np.where((np.sum(v * n, axis=-1) > 0.0)[:, None], -v, v)
        np.testing.assert_allclose(small_ball.chord_ratio(z, v), small_ball.chord_bound(), atol=1e-10)

    def test_polar_angle(self, unit_ball):
        assert unit_ball.polar_angle(np.array([0.0, 1.0, 0.0])) == pytest.approx(math.pi / 2.0)


class TestQuadratureAndGrids:
    """Boundary rules and collocation cells integrate exactly."""

    def test_ball_boundary_area(self, small_ball):
        _, _, w = small_ball.boundary_quadrature(6)
        assert np.sum(w) == pytest.approx(small_ball.surface_area, rel=1e-12)

    def test_flat_cap_boundary_area(self, flat_cap):
        _, _, w = flat_cap.boundary_quadrature(6)
        assert np.sum(w) == pytest.approx(flat_cap.surface_area, rel=1e-12)

    @pytest.mark.parametrize("kind", ["ball", "flat_cap"])
    def test_collocation_volume(self, kind, small_ball, flat_cap):
        dom = small_ball if kind == "ball" else flat_cap
        weights = dom.collocation_weights(dom.collocation_axes(6))
        assert np.sum(weights) == pytest.approx(dom.volume, rel=1e-12)

    @pytest.mark.parametrize("kind", ["ball", "flat_cap"])
    def test_collocation_nodes_inside(self, kind, small_ball, flat_cap):
        dom = small_ball if kind == "ball" else flat_cap
        axes = dom.collocation_axes(6)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        assert np.all(dom.contains(dom.from_grid_coordinates(mesh)))

    def test_disk_beyond_face_raises(self, flat_cap):
        with pytest.raises(ValueError, match="exceeds the flat face radius"):
            flat_cap.disk_quadrature(2.0, 4, 8)


class TestBuildDomain:
    """Domains from config sections."""

    def test_ball(self):
        dom = build_domain(BallSpec(r=0.3))
        assert isinstance(dom, Ball) and dom.r == 0.3

    def test_flat_cap(self):
        dom = build_domain(FlatCapSpec(R=1.0, a=0.25, r1=0.5))
        assert isinstance(dom, FlatCap) and dom.r1 == 0.5
