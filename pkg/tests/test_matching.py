import math

import numpy as np
import pytest

from visioncomm.features import GridSpec, render_heatmap
from visioncomm.geometry import Box3D
from visioncomm.matching import (MatchResult, MatchSample, class_label, match_3dumm, match_from_heatmap,
                                 match_from_logits, match_mcumm, match_rumm, nearest_box, rumm_expectation,
                                 sorted_order, umac)
from visioncomm.neural import McummConfig, McummModel, UmanConfig, UmanModel

GRID = GridSpec(0.0, 0.0, 1.04, 0.88, 20, 80)


def box(x, y, l=4.5, w=2.0):
    return Box3D(l, w, 1.6, x, y, 0.8)


def random_scene(rng, n):
    ys = rng.permutation(np.arange(2.0, 80.0, 6.0))[:n]
    return [box(float(rng.choice([7.05, 10.55]) + rng.uniform(-0.3, 0.3)), float(y)) for y in ys]


def test_oracle_heatmap_recovers_the_true_box():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(200):
        boxes = random_scene(rng, int(rng.integers(1, 9)))
        truth = int(rng.integers(len(boxes)))
        heat = render_heatmap(boxes[truth], GRID, 0.3).values[..., 0]
        cell = GRID.cell_of(boxes[truth].x, boxes[truth].y)
        cx, cy = GRID.center(*cell)
        d = sorted(math.hypot(b.x - cx, b.y - cy) for b in boxes)
        if len(d) > 1 and d[0] == d[1]:
            continue
        if nearest_box(boxes, cx, cy)[0] != truth:
            continue  # the true box is not the strict nearest to its own cell center
        assert match_from_heatmap(heat, boxes, GRID, truth).correct
        checked += 1
    assert checked > 150


def test_single_box_always_chosen():
    heat = np.random.default_rng(1).random((20, 80))
    assert match_from_heatmap(heat, [box(3, 3)], GRID, 0).correct
    assert match_rumm([box(3, 3)], np.random.default_rng(0), 0).correct


def test_nearest_box_tie_rule():
    boxes = [box(2.0, 5.0), box(0.0, 3.0), box(4.0, 3.0)]
    k, d, tie = nearest_box(boxes, 2.0, 3.0)
    assert (k, d, tie) == (1, 2.0, True)
    with pytest.raises(ValueError):
        nearest_box([], 0, 0)


def test_mcumm_class_order_and_decode():
    boxes = [box(3, 10), box(3, 50)]
    assert sorted_order(boxes) == [1, 0]  # decreasing Y
    logits = np.array([0.9, 0.1] + [0.0] * 10)
    assert match_from_logits(logits, boxes, 12).predicted == 1
    # classes beyond the box count are ignored
    assert match_from_logits(np.array([0.1, 0.2, 5.0]), boxes, 3).predicted == 0
    with pytest.raises(ValueError):
        match_from_logits(np.zeros(1), boxes, 1)


def test_class_label_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        boxes = random_scene(rng, int(rng.integers(1, 9)))
        for truth in range(len(boxes)):
            assert sorted_order(boxes)[class_label(boxes, truth)] == truth


def test_rumm_expectation_matches_monte_carlo():
    rng = np.random.default_rng(3)
    scenes = [random_scene(rng, int(rng.integers(1, 9))) for _ in range(50)]
    truths = [int(rng.integers(len(s))) for s in scenes]
    expect = rumm_expectation([len(s) for s in scenes])
    trials = 10_000
    hits = 0
    for t in range(trials):
        k = t % len(scenes)
        hits += match_rumm(scenes[k], rng, truths[k]).correct
    # trials cycle evenly through the scenes, so the mean of 1/n is the exact expectation
    sigma = math.sqrt(expect * (1 - expect) / trials)
    assert abs(hits / trials - expect) < 3 * sigma
    a = [match_rumm(scenes[0], np.random.default_rng(9)).predicted for _ in range(3)]
    assert len(set(a)) == 1


def test_umac():
    r = lambda ok: MatchResult(0, None, 0.0, ok)
    assert umac([r(True)] * 3) == 1.0
    assert umac([r(True), r(False)]) == 0.5
    with pytest.raises(ValueError):
        umac([])
    with pytest.raises(ValueError):
        rumm_expectation([])


def test_network_matchers_are_deterministic():
    cfg = UmanConfig(m=2, grid=(40, 160), n_pairs=8, bdf_filters=(2, 2, 2), beam_filters=(2, 2, 2),
                     head_filters=(2, 2, 1), embed_dim=2, hidden=2)
    rng = np.random.default_rng(4)
    boxes = tuple(random_scene(rng, 4))
    sample = MatchSample(rng.random((40, 160, 6)).astype(np.float32), np.array([1, 5]),
                         np.zeros((20, 80)), boxes, 2)
    a = match_3dumm(UmanModel(cfg, seed=1), sample, GRID)
    b = match_3dumm(UmanModel(cfg, seed=1), sample, GRID)
    assert a == b and 0 <= a.predicted < 4
    mc = McummConfig(cfg, (4,), 12)
    assert match_mcumm(McummModel(mc, seed=2), sample, 12) == match_mcumm(McummModel(mc, seed=2), sample, 12)
