"""Grid encoders: box-size maps, keypoint heatmaps, user/scatterer maps and VRAN labels.

Tensors are laid out (columns along X, rows along Y, channels), i.e.
``values[ix, iy, c]``. Cell membership is half-open: ``x0 + ix*W <= x < x0 + (ix+1)*W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Box3D
from .scene import CATALOG

BDF, HEATMAP, USDF, OB, OP = "bdf", "heatmap", "usdf", "ob", "op"


@dataclass(frozen=True)
class GridSpec:
    x0: float
    y0: float
    cell_length: float  # along Y
    cell_width: float  # along X
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.cell_length <= 0 or self.cell_width <= 0:
            raise ValueError("grid cells must have positive size")
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("grid needs at least one column and one row")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.n_x * self.cell_width, self.n_y * self.cell_length)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        ix = math.floor((x - self.x0) / self.cell_width)
        iy = math.floor((y - self.y0) / self.cell_length)
        if 0 <= ix < self.n_x and 0 <= iy < self.n_y:
            return ix, iy
        return None

    def center(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.x0 + (ix + 0.5) * self.cell_width, self.y0 + (iy + 0.5) * self.cell_length)

    def scaled(self, factor: int) -> "GridSpec":
        """Same region, cells ``factor`` times larger along both axes."""
        if self.n_x % factor or self.n_y % factor:
            raise ValueError(f"grid {self.shape} not divisible by {factor}")
        return GridSpec(self.x0, self.y0, self.cell_length * factor, self.cell_width * factor,
                        self.n_x // factor, self.n_y // factor)


@dataclass(frozen=True)
class SizeNorms:
    length: float
    width: float
    height: float

    @classmethod
    def from_catalog(cls, margin: float = 1.1) -> "SizeNorms":
        return cls(max(s.length for s in CATALOG) * margin,
                   max(s.width for s in CATALOG) * margin,
                   max(s.height for s in CATALOG) * margin)

    def normalize(self, l: float, w: float, h: float) -> np.ndarray:
        return np.minimum(np.array([l / self.length, w / self.width, h / self.height]), 1.0)


@dataclass
class GridTensor:
    role: str
    values: np.ndarray
    ignored: int = 0  # boxes whose center fell outside the grid

    @property
    def shape(self):
        return self.values.shape


def _bucket(boxes: Sequence[Box3D], grid: GridSpec):
    cells: dict[tuple[int, int], list[int]] = {}
    ignored = 0
    for k, b in enumerate(boxes):
        c = grid.cell_of(b.x, b.y)
        if c is None:
            ignored += 1
            continue
        cells.setdefault(c, []).append(k)
    return cells, ignored


def _mean_size(boxes: Sequence[Box3D], members: Sequence[int], norms: SizeNorms) -> np.ndarray:
    l = sum(boxes[k].length for k in members) / len(members)
    w = sum(boxes[k].width for k in members) / len(members)
    h = sum(boxes[k].height for k in members) / len(members)
    return norms.normalize(l, w, h)


def encode_bdf(boxes: Sequence[Box3D], grid: GridSpec, norms: SizeNorms) -> GridTensor:
    """Per-cell mean box size over the size norms; empty cells stay zero."""
    out = np.zeros((grid.n_x, grid.n_y, 3))
    cells, ignored = _bucket(boxes, grid)
    for (ix, iy), members in cells.items():
        # members are summed in index order, so the result ignores input order only up to rounding
        out[ix, iy] = _mean_size(boxes, sorted(members, key=lambda k: (boxes[k].y, boxes[k].x)), norms)
    return GridTensor(BDF, out, ignored)


def gaussian_radius(l_cells: int, w_cells: int, min_iou: float) -> float:
    """Largest corner displacement keeping IoU >= ``min_iou`` with the original box.

    Minimum over three geometries: both corners shifted the same way, both
    moved inwards, both moved outwards.
    """
    if l_cells < 1 or w_cells < 1:
        raise ValueError("box must span at least one cell per axis")
    if not 0 < min_iou < 1:
        raise ValueError("min_iou must lie in (0, 1)")
    s, p, g = l_cells + w_cells, l_cells * w_cells, min_iou
    d1 = s * s - 4 * p * (1 - g) / (1 + g)
    d2 = s * s - 4 * p * (1 - g)
    d3 = g * g * s * s + 4 * p * g * (1 - g)
    if min(d1, d2, d3) < 0:
        raise ValueError(f"no real radius for size ({l_cells}, {w_cells}) at IoU {min_iou}")
    r1 = (s - math.sqrt(d1)) / 2
    r2 = (s - math.sqrt(d2)) / 4
    r3 = (-g * s + math.sqrt(d3)) / (4 * g)
    return min(r1, r2, r3)


def heatmap_sigma(radius: float) -> float:
    return (2 * math.floor(radius) + 1) / 6


def render_heatmap(box: Box3D, grid: GridSpec, min_iou: float) -> GridTensor:
    """Gaussian bump at the cell holding the box center, cut to a (2*floor(r)+1) window."""
    cell = grid.cell_of(box.x, box.y)
    if cell is None:
        raise ValueError(f"box center ({box.x:.2f}, {box.y:.2f}) outside the heatmap grid")
    l_cells = math.ceil(box.length / grid.cell_length)
    w_cells = math.ceil(box.width / grid.cell_width)
    r = gaussian_radius(l_cells, w_cells, min_iou)
    k = math.floor(r)
    sigma = heatmap_sigma(r)
    out = np.zeros((grid.n_x, grid.n_y, 1))
    cx, cy = cell
    xs = np.arange(max(cx - k, 0), min(cx + k, grid.n_x - 1) + 1)
    ys = np.arange(max(cy - k, 0), min(cy + k, grid.n_y - 1) + 1)
    d2 = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2
    out[xs[0]:xs[-1] + 1, ys[0]:ys[-1] + 1, 0] = np.exp(-d2 / (2 * sigma * sigma))
    return GridTensor(HEATMAP, out)


def heatmap_argmax(F, grid: GridSpec) -> tuple[tuple[int, int], tuple[float, float]]:
    """Peak cell (ties to the smallest row-major index) and its center coordinates."""
    values = F.values if isinstance(F, GridTensor) else np.asarray(F)
    if values.size == 0:
        raise ValueError("empty heatmap")
    values = values.reshape(grid.n_x, grid.n_y)
    ix, iy = np.unravel_index(int(np.argmax(values)), values.shape)
    return (int(ix), int(iy)), grid.center(int(ix), int(iy))


def encode_usdf(boxes: Sequence[Box3D], user_boxes: Sequence[int], grid: GridSpec,
                norms: SizeNorms) -> GridTensor:
    """Sizes plus a 4th channel: number of users in the cell, or -1 for scatterers only.

    ``user_boxes[u]`` is the index in ``boxes`` of user u's box. Several users may
    point at the same box (e.g. after a matching error); each one is counted.
    """
    out = np.zeros((grid.n_x, grid.n_y, 4))
    cells, ignored = _bucket(boxes, grid)
    users_per_box: dict[int, int] = {}
    for k in user_boxes:
        if not 0 <= k < len(boxes):
            raise ValueError(f"user box index {k} not in the box set")
        users_per_box[k] = users_per_box.get(k, 0) + 1
    for (ix, iy), members in cells.items():
        members = sorted(members, key=lambda k: (boxes[k].y, boxes[k].x))
        out[ix, iy, :3] = _mean_size(boxes, members, norms)
        count = sum(users_per_box.get(k, 0) for k in members)
        out[ix, iy, 3] = count if count > 0 else -1
    return GridTensor(USDF, out, ignored)


def user_cells(boxes: Sequence[Box3D], user_boxes: Sequence[int], grid: GridSpec) -> list[tuple[int, int]]:
    cells = []
    for k in user_boxes:
        c = grid.cell_of(boxes[k].x, boxes[k].y)
        if c is None:
            raise ValueError(f"user box {k} lies outside the grid")
        cells.append(c)
    return cells


def encode_labels(b_star: Sequence[int], p_star: Sequence[float], p_max: Sequence[float],
                  cells: Sequence[tuple[int, int]], grid: GridSpec,
                  n_bs: int) -> tuple[GridTensor, GridTensor]:
    """One-hot serving BS per user cell and mean normalized power per user cell."""
    if not len(b_star) == len(p_star) == len(cells):
        raise ValueError("b*, P* and user cells must have one entry per user")
    ob = np.zeros((grid.n_x, grid.n_y, n_bs))
    op = np.zeros((grid.n_x, grid.n_y, 1))
    count = np.zeros((grid.n_x, grid.n_y))
    for b, p, (ix, iy) in zip(b_star, p_star, cells):
        if b is None or not 0 <= b < n_bs:
            raise ValueError(f"user without a valid serving BS: {b!r}")
        ob[ix, iy, b] = 1.0
        op[ix, iy, 0] += p / p_max[b]
        count[ix, iy] += 1
    mask = count > 0
    op[mask, 0] /= count[mask]
    return GridTensor(OB, ob), GridTensor(OP, op)
