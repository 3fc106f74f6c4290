"""
Tests for boundary data, J, S and the derivative-side operators.
"""
import math
import pytest
import numpy as np

from src.collision import maxwellian
from src.geometry import Ball
from src.transport import (
    CapCutoff,
    FlatCutoff,
    LineQuadrature,
    apply_J,
    apply_S,
    apply_S_s,
    apply_S_v,
    apply_S_x,
    build_boundary_data,
    cutoff_profile,
    duhamel_residual,
    grad_v_J,
    grad_x_J,
    smooth_step,
    time_moment_bound,
    uniform_weight_bound,
)
from src.config import CapCutoffSpec, FlatCutoffSpec

E1 = np.array([1.0, 0.0, 0.0])


def _ones(x, v):
    return np.ones(np.shape(x)[:-1])


def _speed_only(x, v):
    return np.exp(-np.sum(v * v, axis=-1)) * np.ones(np.shape(x)[:-1])


def _central_difference(fn, point, h=1e-6):
    grad = np.empty(point.shape)
    for j in range(3):
        dp = np.zeros_like(point)
        dp[..., j] = h
        grad[..., j] = (fn(point + dp) - fn(point - dp)) / (2.0 * h)
    return grad


class TestSmoothStep:
    """The C-infinity step and cutoff profiles."""

    def test_values(self):
        np.testing.assert_allclose(smooth_step([0.0, 0.5, 1.0]), [0.0, 0.5, 1.0], atol=1e-15)

    def test_flat_outside_unit_interval(self):
        np.testing.assert_array_equal(smooth_step([-3.0, -1e-3, 1.001, 7.0]), [0.0, 0.0, 1.0, 1.0])

    def test_monotone(self):
        values = smooth_step(np.linspace(0.0, 1.0, 101))
        assert np.all(np.diff(values) >= 0.0)

    def test_cutoff_profile(self):
        np.testing.assert_allclose(cutoff_profile([0.1, 0.2, 0.4], 0.1, 0.3), [1.0, 0.5, 0.0], atol=1e-12)


class TestBoundaryData:
    """Cutoff data on the two domains."""

    def test_flat_cutoff_needs_flat_cap(self, unit_ball):
        with pytest.raises(ValueError, match="flat_cap"):
            FlatCutoff(unit_ball, 0.5)

    def test_cap_cutoff_needs_ball(self, flat_cap):
        with pytest.raises(ValueError, match="ball domain"):
            CapCutoff(flat_cap, 0.3, 0.6)

    def test_cap_angles(self, unit_ball):
        with pytest.raises(ValueError, match="theta1 < theta2"):
            CapCutoff(unit_ball, 0.6, 0.3)

    def test_flat_cutoff_profile(self, flat_cap):
        data = FlatCutoff(flat_cap, 0.5)
        z = np.array([[0.0, 0.1, 0.0], [0.0, 0.3, 0.0], [-1.25, 0.0, 0.0]])
        np.testing.assert_allclose(data.profile(z), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(data.plateau(z), [True, False, False])

    def test_cap_cutoff_value(self, unit_ball):
        data = CapCutoff(unit_ball, 0.3, 0.6)
        v = np.array([-1.0, 0.5, 0.0])
        assert data(E1, v) == pytest.approx(maxwellian(v))
        assert data(-E1, v) == 0.0

    def test_velocity_gradient(self, unit_ball):
        data = CapCutoff(unit_ball, 0.3, 0.6)
        v = np.array([-1.0, 0.5, 0.0])
        np.testing.assert_allclose(data.velocity_gradient(E1, v), -v * maxwellian(v))

    def test_build_from_spec(self, flat_cap, unit_ball):
        assert isinstance(build_boundary_data(FlatCutoffSpec(r1=0.5), flat_cap), FlatCutoff)
        assert isinstance(build_boundary_data(CapCutoffSpec(theta1=0.3, theta2=0.6), unit_ball), CapCutoff)


class TestApplyJ:
    """Free streaming of boundary data."""

    def test_center_to_cap(self, unit_ball, hard_sphere):
        data = CapCutoff(unit_ball, 0.3, 0.6)
        v = -E1
        expected = math.exp(-float(hard_sphere.nu(v))) * math.exp(-0.5)
        assert apply_J(unit_ball, hard_sphere, data, np.zeros(3), v) == pytest.approx(expected, rel=1e-12)

    def test_zero_velocity(self, unit_ball, hard_sphere):
        data = CapCutoff(unit_ball, 0.3, 0.6)
        assert apply_J(unit_ball, hard_sphere, data, np.zeros(3), np.zeros(3)) == 0.0

    def test_batched(self, small_ball, hard_sphere, rng):
        data = CapCutoff(small_ball, 0.3, 0.6)
        x = small_ball.sample_interior(rng, 10)
        v = rng.standard_normal((10, 3))
        assert apply_J(small_ball, hard_sphere, data, x, v).shape == (10,)


class TestApplyS:
    """Line integrals along backward characteristics."""

    def test_constant_source(self, unit_ball, hard_sphere):
        x = np.array([[0.1, 0.2, -0.1]])
        v = np.array([[0.6, 0.3, 0.2]])
        tau = unit_ball.exit_time(x, v)
        nu = hard_sphere.nu(v)
        expected = (1.0 - np.exp(-nu * tau)) / nu
        np.testing.assert_allclose(apply_S(unit_ball, hard_sphere, _ones, x, v), expected, rtol=1e-10)

    def test_first_moment(self, unit_ball, hard_sphere):
        x = np.array([[0.1, 0.2, -0.1]])
        v = np.array([[0.6, 0.3, 0.2]])
        tau = unit_ball.exit_time(x, v)
        nu = hard_sphere.nu(v)
        expected = (1.0 - np.exp(-nu * tau) * (1.0 + nu * tau)) / nu ** 2
        np.testing.assert_allclose(apply_S_s(unit_ball, hard_sphere, _ones, x, v), expected, rtol=1e-10)

    def test_zero_velocity(self, unit_ball, hard_sphere):
        x = np.array([[0.1, 0.0, 0.0]])

        def h(points, v):
            return 1.0 + points[..., 0]

        value = apply_S(unit_ball, hard_sphere, h, x, np.zeros((1, 3)))
        np.testing.assert_allclose(value, 1.1 * math.sqrt(2.0), rtol=1e-10)

    def test_line_quadrature_panels(self):
        s, w = LineQuadrature(order=4).nodes(2.0, 1.0)
        assert s.size == 16
        assert np.sum(w) == pytest.approx(2.0)

    def test_duhamel_residual(self, unit_ball, hard_sphere):
        def h(points, v):
            return (1.0 + 0.5 * np.sin(points[..., 0])) * np.exp(-np.sum(v * v, axis=-1))

        x = np.array([[0.1, 0.2, -0.1]])
        v = np.array([[0.6, 0.3, 0.2]])
        assert float(duhamel_residual(unit_ball, hard_sphere, h, x, v)[0]) < 1e-4


class TestBoundaryTerms:
    """S_x and S_v: the boundary-trace pieces of grad S."""

    CENTER = np.zeros((1, 3))

    def test_S_x_at_center(self, unit_ball, hard_sphere):
        value = apply_S_x(unit_ball, hard_sphere, _ones, self.CENTER, E1[None, :])[0]
        np.testing.assert_allclose(value, E1 * math.exp(-float(hard_sphere.nu(E1))), atol=1e-14)

    def test_S_v_at_center(self, unit_ball, hard_sphere):
        v = 1.5 * np.array([[0.6, 0.8, 0.0]])
        expected = -v[0] / 1.5 ** 3 * math.exp(-float(hard_sphere.nu(v[0])) / 1.5)
        value = apply_S_v(unit_ball, hard_sphere, _ones, self.CENTER, v)[0]
        np.testing.assert_allclose(value, expected, rtol=1e-6)

    def test_zero_data(self, small_ball, hard_sphere):
        zero = lambda x, v: np.zeros(np.shape(x)[:-1])
        x = np.array([[0.1, 0.0, 0.2]])
        v = np.array([[0.5, -1.0, 0.3]])
        np.testing.assert_array_equal(apply_S_x(small_ball, hard_sphere, zero, x, v), 0.0)
        np.testing.assert_array_equal(apply_S_v(small_ball, hard_sphere, zero, x, v), 0.0)

    def test_magnitudes(self, small_ball, hard_sphere, rng):
        x = small_ball.sample_interior(rng, 200)
        u = rng.standard_normal((200, 3))
        v = u / np.linalg.norm(u, axis=-1, keepdims=True) * rng.uniform(0.5, 3.0, 200)[:, None]
        tau, q = small_ball.footpoint(x, v)
        keep = small_ball.grazing_factor(q, v) > 0.1
        x, v, tau, q = x[keep], v[keep], tau[keep], q[keep]
        boundary = np.exp(-hard_sphere.nu(v) * tau) * _speed_only(q, v)

        sx = np.linalg.norm(apply_S_x(small_ball, hard_sphere, _speed_only, x, v), axis=-1)
        law = boundary / (small_ball.grazing_factor(q, v) * np.linalg.norm(v, axis=-1))
        np.testing.assert_allclose(sx, law, rtol=1e-12)

        sv = np.linalg.norm(apply_S_v(small_ball, hard_sphere, _speed_only, x, v), axis=-1)
        np.testing.assert_allclose(sv, small_ball.grad_v_tau_bound(x, v) * boundary, rtol=1e-5)


class TestDerivatives:
    """Closed-form gradients of J against central differences."""

    X = np.array([[0.1, 0.05, 0.0]])
    V = np.array([[-1.0, 0.8, 0.1]])

    def test_footpoint_in_transition_zone(self, small_ball):
        _, q = small_ball.footpoint(self.X, self.V)
        assert 0.3 < float(small_ball.polar_angle(q)[0]) < 0.6

    def test_grad_x(self, small_ball, hard_sphere):
        data = CapCutoff(small_ball, 0.3, 0.6)
        exact = grad_x_J(small_ball, hard_sphere, data, self.X, self.V)
        fd = _central_difference(lambda x: apply_J(small_ball, hard_sphere, data, x, self.V), self.X)
        np.testing.assert_allclose(exact, fd, rtol=1e-4, atol=1e-9)

    def test_grad_v(self, small_ball, hard_sphere):
        data = CapCutoff(small_ball, 0.3, 0.6)
        exact = grad_v_J(small_ball, hard_sphere, data, self.X, self.V)
        fd = _central_difference(lambda v: apply_J(small_ball, hard_sphere, data, self.X, v), self.V)
        np.testing.assert_allclose(exact, fd, rtol=1e-4, atol=1e-9)


class TestBounds:
    """Moment bound and the weighted sup-norm ratios."""

    def test_time_moment_bound(self):
        assert time_moment_bound(0.0, 3.0) == 1.0
        assert time_moment_bound(1.0, 1.0) == pytest.approx(2.0 / math.e)

    def test_time_moment_bound_dominates(self):
        t = np.linspace(0.0, 50.0, 5001)
        bound = time_moment_bound(2.0, 0.7)
        assert np.all(t ** 2 * np.exp(-0.7 * t) <= bound * np.exp(-0.35 * t) * (1.0 + 1e-12))

    def test_time_moment_bound_rejects_rate(self):
        with pytest.raises(ValueError, match="positive"):
            time_moment_bound(1.0, 0.0)

    def test_uniform_weight_bound(self, hard_sphere):
        dom = Ball(0.5)
        data = CapCutoff(dom, 0.3, 0.6)
        report = uniform_weight_bound(dom, hard_sphere, data, _speed_only, alpha=0.1, n_samples=300)
        assert 0.0 < report["J_ratio"] <= 1.0
        assert report["S_ratio"] <= report["S_bound"]
