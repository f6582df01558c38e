"""Coordinate frames, lane-aligned 3D boxes, 3D IoU and multi-camera box fusion.

Frames: the global frame (GCS) has X across the road, Y along the lanes and Z up.
Each camera frame (CCS) has its optic axis on Y. A box azimuth is the angle
between the vehicle heading and the Y axis of the frame, so a heading of 0
points along +Y and a heading of pi along -Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

GCS = "gcs"


@dataclass(frozen=True)
class Box3D:
    length: float
    width: float
    height: float
    x: float
    y: float
    z: float
    azimuth: float = 0.0
    frame: str = GCS
    vehicle_id: int | None = None

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(f"box sizes must be positive, got {self.size}")
        if not self.frame:
            raise ValueError("box frame tag must be set")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height


def ccs_frame(camera_index: int) -> str:
    return f"ccs{camera_index}"


@dataclass(frozen=True)
class CameraPose:
    """Camera mounted on a base station.

    ``elevation`` tilts the optic axis downwards for positive values;
    ``azimuth`` turns it from +Y towards +X.
    """

    x: float
    y: float
    z: float
    elevation: float
    azimuth: float
    fov: float = math.radians(110.0)
    max_range: float = 90.0
    index: int = 0

    def __post_init__(self):
        if not -math.pi / 2 < self.elevation < math.pi / 2:
            raise ValueError("camera elevation must lie in (-pi/2, pi/2)")
        if not 0 < self.fov < math.pi:
            raise ValueError("camera FOV must lie in (0, pi)")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def frame(self) -> str:
        return ccs_frame(self.index)

    def sees(self, x: float, y: float) -> bool:
        """Center-in-frustum test on the ground plane (horizontal FOV and range)."""
        dx, dy = x - self.x, y - self.y
        dist = math.hypot(dx, dy)
        if dist > self.max_range or dist == 0.0:
            return False
        bearing = math.atan2(dx, dy)
        return abs(wrap_angle(bearing - self.azimuth)) <= self.fov / 2


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def azimuth_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def elevation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def camera_rotation(pose: CameraPose) -> np.ndarray:
    """Rotation taking camera-frame coordinates to global coordinates."""
    return azimuth_matrix(pose.azimuth) @ elevation_matrix(pose.elevation)


def ccs_to_gcs(box: Box3D, pose: CameraPose) -> Box3D:
    if box.frame != pose.frame:
        raise ValueError(f"box is in frame {box.frame!r}, camera expects {pose.frame!r}")
    x, y, z = camera_rotation(pose) @ box.center + pose.position
    return replace(box, x=float(x), y=float(y), z=float(z),
                   azimuth=wrap_angle(pose.azimuth + box.azimuth), frame=GCS)


def gcs_to_ccs(box: Box3D, pose: CameraPose) -> Box3D:
    if box.frame != GCS:
        raise ValueError(f"box is in frame {box.frame!r}, expected {GCS!r}")
    x, y, z = camera_rotation(pose).T @ (box.center - pose.position)
    return replace(box, x=float(x), y=float(y), z=float(z),
                   azimuth=wrap_angle(box.azimuth - pose.azimuth), frame=pose.frame)


def overlap_volume(a: Box3D, b: Box3D) -> float:
    # lane assumption: width spans X, length spans Y, both boxes stand on the ground
    w = min(a.width, b.width, 0.5 * a.width + 0.5 * b.width - abs(a.x - b.x))
    l = min(a.length, b.length, 0.5 * a.length + 0.5 * b.length - abs(a.y - b.y))
    return max(0.0, w) * max(0.0, l) * min(a.height, b.height)


def iou3d(a: Box3D, b: Box3D) -> float:
    v = overlap_volume(a, b)
    return v / (a.volume + b.volume - v)


def lane_heading(azimuth: float) -> float:
    """Snap an azimuth to the nearer lane direction, 0 or pi."""
    return 0.0 if math.cos(azimuth) >= 0 else math.pi


def merge_boxes(boxes: Sequence[Box3D]) -> Box3D:
    """Average sizes and planar center; heading by majority vote, z back on the ground.

    A vote tie keeps the heading of the first box (the seed).
    """
    n = len(boxes)
    l = sum(b.length for b in boxes) / n
    w = sum(b.width for b in boxes) / n
    h = sum(b.height for b in boxes) / n
    x = sum(b.x for b in boxes) / n
    y = sum(b.y for b in boxes) / n
    forward = sum(1 for b in boxes if lane_heading(b.azimuth) == 0.0)
    if 2 * forward == n:
        heading = lane_heading(boxes[0].azimuth)
    else:
        heading = 0.0 if 2 * forward > n else math.pi
    return Box3D(l, w, h, x, y, h / 2, heading, GCS)


def _seed_key(box: Box3D) -> tuple[float, float]:
    return (box.y, box.x)


def eliminate_once(boxes: Iterable[Box3D], gamma: float) -> list[Box3D]:
    """One sweep of greedy box elimination.

    The seed is the remaining box with the smallest (y, x) center instead of a
    random pick, which keeps runs reproducible.
    """
    remaining = sorted(boxes, key=_seed_key)
    out = []
    while remaining:
        seed = remaining[0]
        group = [b for b in remaining if iou3d(b, seed) > gamma]
        if seed not in group:  # iou(seed, seed) == 1 > gamma, guard against NaN sizes
            group.insert(0, seed)
        out.append(merge_boxes(group))
        ids = {id(b) for b in group}
        remaining = [b for b in remaining if id(b) not in ids]
    return out


def eliminate(boxes: Iterable[Box3D], gamma: float) -> list[Box3D]:
    """Remove redundant detections so no two output boxes overlap by more than ``gamma``.

    A single sweep can leave a merged box overlapping a neighbour it did not
    overlap before averaging, so sweeps repeat until nothing merges. The result
    is sorted by (y, x).
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    current = list(boxes)
    if not current:
        return []
    current = eliminate_once(current, gamma)
    while True:
        nxt = eliminate_once(current, gamma)
        if len(nxt) == len(current):
            return sorted(nxt, key=_seed_key)
        current = nxt


def pairwise_max_iou(boxes: Sequence[Box3D]) -> float:
    best = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            best = max(best, iou3d(boxes[i], boxes[j]))
    return best
