import math

import numpy as np
import pytest

from dynscan.core import (ChannelStack, GridSpec, MeasurementMask, apply_mask,
                          physical_distance)


def make_stack(seed=0, rows=4, cols=5, d=2):
    rng = np.random.default_rng(seed)
    grid = GridSpec(rows, cols)
    planes = rng.uniform(0, 1, size=(d, rows, cols))
    return ChannelStack(grid, planes, tuple(range(1, d + 1)))


class TestGridSpec:
    def test_rejects_single_cell(self):
        with pytest.raises(ValueError):
            GridSpec(1, 1)

    def test_rejects_nonpositive_pixels(self):
        with pytest.raises(ValueError):
            GridSpec(3, 3, pixel_width_um=0.0)
        with pytest.raises(ValueError):
            GridSpec(3, 3, pixel_height_um=-1.0)

    def test_single_row_grid_allowed(self):
        g = GridSpec(1, 3)
        assert g.n_cells == 3

    def test_physical_coords_scale(self):
        g = GridSpec(3, 3, pixel_width_um=15.0, pixel_height_um=10.0)
        coords = g.physical_coords(np.array([[2, 1]]))
        assert coords[0, 0] == 20.0 and coords[0, 1] == 15.0


class TestPhysicalDistance:
    def test_identity(self):
        g = GridSpec(3, 3, 15.0, 15.0)
        assert physical_distance((1, 1), (1, 1), g) == 0.0

    def test_axis_aligned(self):
        g = GridSpec(3, 3, 15.0, 15.0)
        assert physical_distance((0, 0), (0, 1), g) == 15.0

    def test_diagonal_rectangular_pixels(self):
        # hand Euclidean: sqrt(15^2 + 10^2)
        g = GridSpec(3, 3, pixel_width_um=15.0, pixel_height_um=10.0)
        expected = math.hypot(15.0, 10.0)
        assert physical_distance((0, 0), (1, 1), g) == pytest.approx(expected, abs=1e-12)

    def test_out_of_bounds_rejected(self):
        g = GridSpec(3, 3)
        with pytest.raises(ValueError):
            physical_distance((0, 0), (3, 0), g)

    def test_metric_properties_on_random_triples(self):
        g = GridSpec(7, 9, 12.5, 8.0)
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b, c = [tuple(rng.integers(0, [7, 9])) for _ in range(3)]
            dab = physical_distance(a, b, g)
            dba = physical_distance(b, a, g)
            assert dab == dba
            assert dab >= 0
            assert (dab == 0) == (a == b)
            assert dab <= physical_distance(a, c, g) + physical_distance(c, b, g) + 1e-9


class TestChannelStack:
    def test_labels_must_increase(self):
        g = GridSpec(2, 2)
        with pytest.raises(ValueError):
            ChannelStack(g, np.zeros((2, 2, 2)), (2.0, 1.0))

    def test_rejects_negative_intensity(self):
        g = GridSpec(2, 2)
        with pytest.raises(ValueError):
            ChannelStack(g, -np.ones((1, 2, 2)), (1.0,))

    def test_rejects_shape_mismatch(self):
        g = GridSpec(2, 2)
        with pytest.raises(ValueError):
            ChannelStack(g, np.zeros((1, 3, 2)), (1.0,))

    def test_planes_are_immutable(self):
        stack = make_stack()
        with pytest.raises(ValueError):
            stack.planes[0, 0, 0] = 5.0


class TestMeasurementMask:
    def test_partition_on_random_masks(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            rows, cols = rng.integers(2, 12, size=2)
            mask = MeasurementMask(GridSpec(rows, cols),
                                   rng.uniform(size=(rows, cols)) < rng.uniform())
            assert mask.n_measured + mask.n_unmeasured == rows * cols
            s = {tuple(c) for c in mask.measured_cells}
            t = {tuple(c) for c in mask.unmeasured_cells}
            assert s.isdisjoint(t)
            assert len(s) + len(t) == rows * cols

    def test_cells_row_major(self):
        mask = MeasurementMask(GridSpec(2, 2), np.array([[True, True], [False, True]]))
        assert [tuple(c) for c in mask.measured_cells] == [(0, 0), (0, 1), (1, 1)]

    def test_with_measured_returns_new_mask(self):
        mask = MeasurementMask.empty(GridSpec(3, 3))
        mask2 = mask.with_measured(np.array([[1, 1]]))
        assert mask.n_measured == 0
        assert mask2.n_measured == 1


class TestApplyMask:
    def test_full_mask_reveals_everything(self):
        stack = make_stack()
        mv = apply_mask(stack, MeasurementMask.full(stack.grid))
        cells = mv.mask.measured_cells
        assert np.array_equal(mv.values, stack.planes[:, cells[:, 0], cells[:, 1]])
        assert mv.values.shape == (2, stack.grid.n_cells)

    def test_empty_mask(self):
        stack = make_stack()
        mv = apply_mask(stack, MeasurementMask.empty(stack.grid))
        assert mv.values.shape == (2, 0)
        assert mv.as_maps() == [{}, {}]

    def test_singleton(self):
        stack = make_stack(rows=3, cols=3)
        m = np.zeros((3, 3), dtype=bool)
        m[1, 1] = True
        mv = apply_mask(stack, MeasurementMask(stack.grid, m))
        for z in range(2):
            assert mv.as_maps()[z] == {(1, 1): stack.planes[z, 1, 1]}

    def test_grid_mismatch_rejected(self):
        stack = make_stack()
        with pytest.raises(ValueError):
            apply_mask(stack, MeasurementMask.empty(GridSpec(9, 9)))

    def test_values_exact(self):
        stack = make_stack(seed=7)
        rng = np.random.default_rng(11)
        mask = MeasurementMask(stack.grid, rng.uniform(size=stack.grid.shape) < 0.4)
        mv = apply_mask(stack, mask)
        for (r, c), v in mv.as_maps()[1].items():
            assert v == stack.planes[1, r, c]
