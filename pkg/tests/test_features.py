import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from visioncomm.config import ExperimentConfig
from visioncomm.features import (GridSpec, SizeNorms, encode_bdf, encode_labels, encode_usdf,
                                 gaussian_radius, heatmap_argmax, heatmap_sigma, render_heatmap,
                                 user_cells)
from visioncomm.geometry import Box3D
from visioncomm.scene import CATALOG

GRID = GridSpec(0.0, 0.0, 1.0, 1.0, 10, 20)
NORMS = SizeNorms(12.0, 4.0, 4.0)


def car(x, y, spec=CATALOG[0]):
    return Box3D(spec.length, spec.width, spec.height, x, y, spec.height / 2)


def test_grid_cells_are_half_open():
    assert GRID.cell_of(0.0, 0.0) == (0, 0)
    assert GRID.cell_of(1.0, 0.999) == (1, 0)
    assert GRID.cell_of(10.0, 5.0) is None
    assert GRID.cell_of(-1e-9, 5.0) is None
    assert GRID.center(2, 3) == (2.5, 3.5)


def test_default_grids_tile_the_same_region():
    cfg = ExperimentConfig()
    bdf, heat, usdf = cfg.bdf_grid(), cfg.heatmap_grid(), cfg.usdf_grid()
    assert bdf.shape == (40, 160) and heat.shape == (20, 80) and usdf.shape == (20, 80)
    assert heat.cell_length == pytest.approx(2 * bdf.cell_length)
    assert bdf.extent == pytest.approx(heat.extent)
    assert bdf.extent == pytest.approx(usdf.extent)


def test_bdf_empty_and_single_car():
    assert not encode_bdf([], GRID, NORMS).values.any()
    F = encode_bdf([car(2.5, 3.5)], GRID, NORMS).values
    assert F[2, 3] == pytest.approx([3.71 / 12, 1.79 / 4, 1.55 / 4])
    assert np.count_nonzero(F.any(-1)) == 1


def test_bdf_two_boxes_in_a_cell_average():
    a, b = car(2.2, 3.2), car(2.7, 3.7, CATALOG[2])
    F = encode_bdf([a, b], GRID, NORMS).values
    expect = (NORMS.normalize(*a.size) + NORMS.normalize(*b.size)) / 2
    assert F[2, 3] == pytest.approx(expect)


def test_bdf_counts_boxes_outside_grid():
    assert encode_bdf([car(50, 3)], GRID, NORMS).ignored == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 9.99), st.floats(0, 19.99), st.integers(0, 3)), min_size=1, max_size=8),
       st.randoms(use_true_random=False))
def test_encoders_are_permutation_invariant(items, rnd):
    boxes = [car(x, y, CATALOG[k]) for x, y, k in items]
    users = list(range(0, len(boxes), 2))
    order = list(range(len(boxes)))
    rnd.shuffle(order)
    shuffled = [boxes[i] for i in order]
    inverse = {old: new for new, old in enumerate(order)}
    assert np.array_equal(encode_bdf(boxes, GRID, NORMS).values, encode_bdf(shuffled, GRID, NORMS).values)
    a = encode_usdf(boxes, users, GRID, NORMS).values
    b = encode_usdf(shuffled, [inverse[u] for u in users], GRID, NORMS).values
    assert np.array_equal(a, b)


def test_radius_positive_and_monotone():
    assert gaussian_radius(10, 10, 0.3) > 0
    for w in range(1, 41):
        rs = [gaussian_radius(l, w, 0.3) for l in range(1, 41)]
        assert all(b >= a - 1e-12 for a, b in zip(rs, rs[1:]))


def test_radius_rejects_bad_inputs():
    with pytest.raises(ValueError):
        gaussian_radius(0, 3, 0.3)
    with pytest.raises(ValueError):
        gaussian_radius(3, 3, 1.0)


def test_radius_is_tight_for_one_geometry():
    # at the radius one of the three displacement geometries reaches the IoU bound exactly
    for l, w in [(3, 5), (10, 10), (2, 30), (40, 1)]:
        r = gaussian_radius(l, w, 0.3)
        assert oracles.worst_corner_iou(l, w, r) == pytest.approx(0.3, abs=1e-9)


def test_radius_corner_displacement_oracle():
    ok, detail = oracles.check_radius_oracle(n_sizes=100, seed=21)
    assert ok, detail


def test_heatmap_peak_window_and_neighbour_value():
    grid = GridSpec(0.0, 0.0, 1.0, 1.0, 20, 40)
    box = Box3D(9.0, 7.0, 2.0, 10.5, 20.5, 1.0)
    F = render_heatmap(box, grid, 0.3).values[..., 0]
    r = gaussian_radius(9, 7, 0.3)
    k, sigma = math.floor(r), heatmap_sigma(r)
    assert k >= 1
    assert F[10, 20] == 1.0
    assert F[11, 20] == pytest.approx(math.exp(-1 / (2 * sigma ** 2)))
    assert F[10 + k + 1, 20] == 0.0 and F[10, 20 + k + 1] == 0.0
    assert np.count_nonzero(F) == (2 * k + 1) ** 2


def test_heatmap_strictly_decreasing_with_distance_inside_window():
    grid = GridSpec(0.0, 0.0, 1.0, 1.0, 30, 30)
    F = render_heatmap(Box3D(12.0, 12.0, 2.0, 15.5, 15.5, 1.0), grid, 0.3).values[..., 0]
    ix, iy = np.nonzero(F)
    d2 = (ix - 15) ** 2 + (iy - 15) ** 2
    vals = F[ix, iy]
    for a in range(len(d2)):
        for b in range(len(d2)):
            if d2[a] < d2[b]:
                assert vals[a] > vals[b]
    assert F.min() >= 0 and F.max() <= 1


def test_heatmap_clipped_at_border():
    grid = GridSpec(0.0, 0.0, 1.0, 1.0, 20, 40)
    F = render_heatmap(Box3D(9.0, 7.0, 2.0, 0.5, 0.5, 1.0), grid, 0.3).values[..., 0]
    assert F[0, 0] == 1.0 and F.shape == (20, 40)


def test_heatmap_outside_grid_raises():
    with pytest.raises(ValueError):
        render_heatmap(car(-3, 4), GRID, 0.3)


def test_heatmap_window_suite():
    ok, detail = oracles.check_heatmap_shape(n_boxes=50, seed=22)
    assert ok, detail


def test_argmax_rendered_uniform_and_perturbed():
    grid = GridSpec(0.0, 0.0, 1.0, 1.0, 20, 40)
    F = render_heatmap(Box3D(9.0, 7.0, 2.0, 5.5, 30.5, 1.0), grid, 0.3).values
    assert heatmap_argmax(F, grid)[0] == (5, 30)
    assert heatmap_argmax(np.full((20, 40), 0.5), grid) == ((0, 0), (0.5, 0.5))
    gap = 1.0 - np.sort(F.ravel())[-2]
    noise = np.random.default_rng(0).uniform(-0.49 * gap, 0.49 * gap, F.shape)
    assert heatmap_argmax(F + noise, grid)[0] == (5, 30)


def test_usdf_channels():
    boxes = [car(1.5, 1.5), car(1.6, 1.7), car(5.5, 5.5), car(8.5, 8.5)]
    F = encode_usdf(boxes, [0, 1, 3], GRID, NORMS).values
    assert F[1, 1, 3] == 2
    assert F[5, 5, 3] == -1
    assert F[8, 8, 3] == 1
    assert np.maximum(F[..., 3], 0).sum() == 3
    assert not encode_usdf([], [], GRID, NORMS).values.any()
    with pytest.raises(ValueError):
        encode_usdf(boxes, [7], GRID, NORMS)


def test_user_cells_and_outside_user():
    boxes = [car(1.5, 1.5), car(50, 1)]
    assert user_cells(boxes, [0], GRID) == [(1, 1)]
    with pytest.raises(ValueError):
        user_cells(boxes, [1], GRID)


def test_labels_one_hot_and_mean_power():
    p_max = [2.0, 1.0, 4.0]
    ob, op = encode_labels([0, 2], [2.0, 2.0], p_max, [(1, 1), (1, 1)], GRID, 3)
    assert op.values[1, 1, 0] == pytest.approx(0.75)  # mean of 1.0 and 0.5
    assert ob.values[1, 1].tolist() == [1.0, 0.0, 1.0]
    ob, op = encode_labels([1, 0, 2], [1.0, 1.0, 2.0], p_max, [(0, 0), (3, 4), (9, 19)], GRID, 3)
    assert ob.values.sum() == 3
    assert op.values[0, 0, 0] == 1.0 and op.values[9, 19, 0] == 0.5
    with pytest.raises(ValueError):
        encode_labels([None], [1.0], p_max, [(0, 0)], GRID, 3)
