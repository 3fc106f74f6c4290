"""
Tests for the Gauss rules and local frames.
"""
import math
import pytest
import numpy as np

from src.quadrature import (
    composite_gauss,
    dyadic_edges,
    gauss_legendre,
    orthonormal_frame,
    spherical_directions,
)


class TestGaussRules:
    """Exactness of the mapped rules."""

    def test_polynomial_exact(self):
        x, w = gauss_legendre(4, 0.0, 2.0)
        assert np.sum(w * x ** 3) == pytest.approx(4.0, rel=1e-14)

    def test_composite(self):
        x, w = composite_gauss([0.0, 0.5, 1.0, 3.0], 3)
        assert x.size == 9
        assert np.sum(w * x ** 2) == pytest.approx(9.0, rel=1e-13)

    def test_dyadic_edges(self):
        np.testing.assert_allclose(dyadic_edges(0.0, 1.0, 3), [0.0, 0.125, 0.25, 0.5, 1.0])

    def test_dyadic_panels_resolve_root_singularity(self):
        x, w = composite_gauss(dyadic_edges(0.0, 1.0, 30), 8)
        assert np.sum(w / np.sqrt(x)) == pytest.approx(2.0, rel=1e-4)

    def test_dyadic_panels_resolve_log_singularity(self):
        eps = 1e-6
        x, w = composite_gauss(dyadic_edges(eps, 1.0, 21), 8)
        assert x.min() > eps
        assert np.sum(w / x) == pytest.approx(math.log(1.0 / eps), rel=1e-10)


class TestFrames:
    """Orthonormal completion and spherical directions."""

    @pytest.mark.parametrize("axis", [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.0, 0.8]])
    def test_orthonormal(self, axis):
        n = np.array(axis)
        e_a, e_b = orthonormal_frame(n)
        basis = np.stack([n, e_a, e_b])
        np.testing.assert_allclose(basis @ basis.T, np.eye(3), atol=1e-14)

    def test_directions_have_cosine(self):
        axis = np.array([0.0, 1.0, 0.0])
        t = np.array([-0.5, 0.0, 0.7])
        omega = spherical_directions(axis, t, np.array([0.3, 1.0, 2.0]))
        np.testing.assert_allclose(omega @ axis, t, atol=1e-14)
        np.testing.assert_allclose(np.linalg.norm(omega, axis=-1), 1.0, atol=1e-14)

    def test_frame_is_right_handed(self):
        n = np.array([0.0, 0.0, 1.0])
        e_a, e_b = orthonormal_frame(n)
        assert np.dot(np.cross(n, e_a), e_b) == pytest.approx(1.0)
        assert math.isclose(np.linalg.norm(e_a), 1.0)
