"""
Tests for the collocation grids and interpolation stencils.
"""
import math
import pytest
import numpy as np

from src.config import GridSpec
from src.grids import VGrid, XGrid, multilinear_stencil


class TestMultilinearStencil:
    """Trilinear interpolation on product grids."""

    def test_reproduces_linear_functions(self, rng):
        axes = (np.linspace(0.0, 1.0, 5), np.linspace(-1.0, 2.0, 4), np.array([0.0, 0.5, 2.0]))
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        values = mesh @ np.array([1.0, -2.0, 0.5]) + 3.0
        coords = np.column_stack([rng.uniform(0.0, 1.0, 50), rng.uniform(-1.0, 2.0, 50), rng.uniform(0.0, 2.0, 50)])
        index, weight = multilinear_stencil(axes, (False, False, False), coords)
        approx = np.sum(values[index] * weight, axis=-1)
        np.testing.assert_allclose(approx, coords @ np.array([1.0, -2.0, 0.5]) + 3.0, atol=1e-12)

    def test_periodic_axis_wraps(self):
        n = 4
        axes = (np.array([0.0, 1.0]), np.array([0.0, 1.0]), 2.0 * math.pi * (np.arange(n) + 0.5) / n)
        index, weight = multilinear_stencil(axes, (False, False, True), np.array([[0.0, 0.0, 0.0]]))
        touched = set(index[0][weight[0] > 0.0].tolist())
        assert touched == {0, n - 1}
        assert np.sum(weight) == pytest.approx(1.0)


class TestXGrid:
    """Interior collocation nodes."""

    @pytest.mark.parametrize("kind", ["ball", "flat_cap"])
    def test_nodes_inside_and_volume(self, kind, small_ball, flat_cap):
        dom = small_ball if kind == "ball" else flat_cap
        grid = XGrid(dom, 4)
        assert np.all(dom.contains(grid.nodes))
        assert grid.weights.size == grid.size
        assert np.sum(grid.weights) == pytest.approx(dom.volume, rel=1e-12)

    def test_stencil_partition_of_unity(self, small_ball, rng):
        grid = XGrid(small_ball, 5)
        _, weight = grid.stencil(small_ball.sample_interior(rng, 100))
        np.testing.assert_allclose(np.sum(weight, axis=-1), 1.0, atol=1e-12)
        assert np.all(weight >= 0.0)


class TestVGrid:
    """Spherical velocity grid."""

    def test_weights_fill_the_ball(self):
        grid = VGrid(6.0, 5, 6)
        assert np.sum(grid.weights) == pytest.approx(4.0 / 3.0 * math.pi * 6.0 ** 3, rel=1e-12)

    def test_from_spec(self):
        grid = VGrid.from_spec(GridSpec(n_x=4, n_v_r=3, n_v_ang=4), 6.0)
        assert grid.size == 3 * 2 * 4
        assert np.all(grid.speeds < 6.0)

    def test_stencil_vanishes_beyond_cutoff(self):
        grid = VGrid(4.0, 4, 4)
        _, weight = grid.stencil(np.array([[5.0, 0.0, 0.0], [0.0, 1.0, 1.0]]))
        assert np.sum(weight[0]) == 0.0
        assert np.sum(weight[1]) == pytest.approx(1.0)

    def test_coordinates_round_trip_nodes(self):
        grid = VGrid(4.0, 3, 4)
        c = grid.coordinates(grid.nodes)
        np.testing.assert_allclose(c[:, 0], grid.speeds)
        assert np.all((c[:, 1] >= 0.0) & (c[:, 1] <= math.pi))
