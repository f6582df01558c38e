"""Identify which detected box belongs to a communicating user.

Three matchers: the heatmap matcher (network heatmap, then nearest box), a
classifier over boxes sorted by Y, and a uniform random pick.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import GridSpec, heatmap_argmax
from .geometry import Box3D

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchSample:
    bdf: np.ndarray  # (N_DX, N_DY, 3M), oldest moment first
    beams: np.ndarray  # (M,) beam-pair indices, oldest first
    heatmap: np.ndarray  # (N_FX, N_FY) label
    boxes: tuple[Box3D, ...]  # fused boxes at the last moment
    truth: int  # index of the user's box in ``boxes``
    sample_id: str = ""


@dataclass(frozen=True)
class MatchResult:
    predicted: int
    cell: tuple[int, int] | None
    distance: float
    correct: bool
    tie: bool = False


def nearest_box(boxes: Sequence[Box3D], x: float, y: float) -> tuple[int, float, bool]:
    """Index of the box whose plane center is closest to (x, y).

    Equal distances go to the smaller y, then the smaller x. Also reports
    whether such a tie happened.
    """
    if not boxes:
        raise ValueError("no candidate boxes")
    keyed = sorted((math.hypot(b.x - x, b.y - y), b.y, b.x, k) for k, b in enumerate(boxes))
    d, _, _, k = keyed[0]
    tie = len(keyed) > 1 and keyed[1][0] == d
    if tie:
        log.debug("equidistant boxes at (%.3f, %.3f); picked box %d", x, y, k)
    return k, d, tie


def match_from_heatmap(heat: np.ndarray, boxes: Sequence[Box3D], grid: GridSpec,
                       truth: int | None = None) -> MatchResult:
    cell, (x, y) = heatmap_argmax(heat, grid)
    k, d, tie = nearest_box(boxes, x, y)
    return MatchResult(k, cell, d, k == truth, tie)


def predict_heatmaps(model, bdf: np.ndarray, beams: np.ndarray, batch: int = 32) -> np.ndarray:
    out = []
    for s in range(0, len(bdf), batch):
        out.append(model.forward(bdf[s:s + batch], beams[s:s + batch]))
    return np.concatenate(out) if out else np.zeros((0,) + tuple(model.output_shape))


def match_3dumm(model, sample: MatchSample, grid: GridSpec) -> MatchResult:
    heat = model.forward(sample.bdf[None].astype(np.float32), sample.beams[None])[0]
    return match_from_heatmap(heat, sample.boxes, grid, sample.truth)


def sorted_order(boxes: Sequence[Box3D]) -> list[int]:
    """Box indices by decreasing Y (ties by increasing X): class k is ``order[k]``."""
    return sorted(range(len(boxes)), key=lambda k: (-boxes[k].y, boxes[k].x, k))


def class_label(boxes: Sequence[Box3D], truth: int) -> int:
    return sorted_order(boxes).index(truth)


def match_from_logits(logits: np.ndarray, boxes: Sequence[Box3D], n_classes: int,
                      truth: int | None = None) -> MatchResult:
    """Pick the best-scoring class among those that index an existing box."""
    n = len(boxes)
    if n == 0:
        raise ValueError("no candidate boxes")
    if n > n_classes:
        raise ValueError(f"{n} boxes exceed the {n_classes} classifier classes")
    k = int(np.argmax(np.asarray(logits)[:n]))
    pick = sorted_order(boxes)[k]
    return MatchResult(pick, None, 0.0, pick == truth)


def match_mcumm(model, sample: MatchSample, n_classes: int) -> MatchResult:
    if len(sample.boxes) > n_classes:
        raise ValueError(f"{len(sample.boxes)} boxes exceed the {n_classes} classifier classes")
    logits = model.forward(sample.bdf[None].astype(np.float32), sample.beams[None])[0]
    return match_from_logits(logits, sample.boxes, n_classes, sample.truth)


def match_rumm(boxes: Sequence[Box3D], rng: np.random.Generator, truth: int | None = None) -> MatchResult:
    if not boxes:
        raise ValueError("no candidate boxes")
    k = int(rng.integers(len(boxes)))
    return MatchResult(k, None, 0.0, k == truth)


def rumm_expectation(box_counts: Sequence[int]) -> float:
    """Expected random-pick accuracy: mean of 1/Card(X_E)."""
    if len(box_counts) == 0:
        raise ValueError("no samples")
    return float(np.mean([1.0 / c for c in box_counts]))


def umac(results: Sequence[MatchResult]) -> float:
    if len(results) == 0:
        raise ValueError("UMAC of an empty result set")
    return sum(r.correct for r in results) / len(results)
