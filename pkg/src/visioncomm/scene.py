"""Synthetic two-lane traffic with noisy multi-camera 3D detections.

Stands in for a driving simulator plus a monocular 3D detector: vehicles move
at constant speed with a minimum gap, every camera reports one noisy box per
vehicle whose center lies in its field of view, and the boxes are fused in the
global frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import GCS, Box3D, CameraPose, ccs_to_gcs, eliminate, gcs_to_ccs


@dataclass(frozen=True)
class VehicleSpec:
    name: str
    length: float
    width: float
    height: float


CATALOG = (
    VehicleSpec("car", 3.71, 1.79, 1.55),
    VehicleSpec("sedan", 4.86, 2.03, 1.65),
    VehicleSpec("van", 5.20, 2.61, 2.47),
    VehicleSpec("bus", 11.08, 3.25, 3.33),
)

RIGHT, LEFT = "right", "left"


@dataclass(frozen=True)
class Vehicle:
    id: int
    spec: VehicleSpec
    lane: str
    x: float
    y: float
    speed: float

    @property
    def heading(self) -> float:
        return 0.0 if self.lane == RIGHT else math.pi

    @property
    def box(self) -> Box3D:
        s = self.spec
        return Box3D(s.length, s.width, s.height, self.x, self.y, s.height / 2,
                     self.heading, GCS, self.id)

    @property
    def front(self) -> float:
        half = self.spec.length / 2
        return self.y + half if self.lane == RIGHT else self.y - half

    @property
    def rear(self) -> float:
        half = self.spec.length / 2
        return self.y - half if self.lane == RIGHT else self.y + half


@dataclass(frozen=True)
class RoadGeometry:
    """Straight two-lane road; the monitored region is [0, width] x [0, length]."""

    length: float = 83.2
    width: float = 17.6
    lane_width: float = 3.5
    wall_height: float = 20.0
    crossroad_half: float = 8.0

    @property
    def crossroad_y(self) -> float:
        return self.length / 2

    @property
    def center_x(self) -> float:
        return self.width / 2

    def lane_x(self, lane: str) -> float:
        off = self.lane_width / 2
        return self.center_x + off if lane == RIGHT else self.center_x - off

    def inside(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width and 0.0 <= y < self.length


def crossroad_cameras(road: RoadGeometry, height: float = 6.0, inset: float = 0.5,
                      elevation: float = math.radians(15.0), fov: float = math.radians(110.0),
                      max_range: float = 90.0) -> tuple[CameraPose, ...]:
    """Four cameras on the corners of the crossroad in the middle of the segment.

    The two corners nearer y = 0 look up the road and the other two look down
    it, so every point of the region is seen by at least two cameras.
    """
    lo_y = road.crossroad_y - road.crossroad_half
    hi_y = road.crossroad_y + road.crossroad_half
    xs = (inset, road.width - inset)
    sites = [(xs[0], lo_y, road.length), (xs[1], lo_y, road.length),
             (xs[0], hi_y, 0.0), (xs[1], hi_y, 0.0)]
    cx = road.width / 2
    return tuple(
        CameraPose(x, y, height, elevation, math.atan2(cx - x, target - y), fov, max_range, i)
        for i, (x, y, target) in enumerate(sites))


@dataclass(frozen=True)
class SceneConfig:
    road: RoadGeometry = field(default_factory=RoadGeometry)
    cameras: tuple[CameraPose, ...] = ()
    min_vehicles: int = 3
    max_vehicles: int = 8
    speed_range: tuple[float, float] = (8.0, 14.0)
    min_gap: float = 2.0
    spawn_prob: float = 0.04
    sigma_pos: float = 0.2
    sigma_size: float = 0.05
    frame_interval: float = 0.05
    detect_stride: int = 5
    gamma: float = 1.0 / 3.0
    seed: int = 0

    def __post_init__(self):
        if not self.cameras:
            object.__setattr__(self, "cameras", crossroad_cameras(self.road))
        if not 1 <= self.min_vehicles <= self.max_vehicles:
            raise ValueError("need 1 <= min_vehicles <= max_vehicles")
        if self.frame_interval <= 0 or self.detect_stride < 1:
            raise ValueError("frame interval and detection stride must be positive")
        if self.road.length <= 0 or self.road.width <= 0:
            raise ValueError("road sizes must be positive")

    @property
    def coherence_time(self) -> float:
        return self.detect_stride * self.frame_interval


@dataclass(frozen=True)
class Snapshot:
    step: int
    time: float
    vehicles: tuple[Vehicle, ...]
    detections: tuple[tuple[Box3D, ...], ...] = ()
    fused: tuple[Box3D, ...] = ()

    def vehicle(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)

    @property
    def fused_ids(self) -> tuple[int | None, ...]:
        return tuple(b.vehicle_id for b in self.fused)


class _Traffic:
    def __init__(self, config: SceneConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        self.next_id = 0
        self.vehicles: list[Vehicle] = []

    def _new(self, lane: str, y: float, spec: VehicleSpec) -> Vehicle:
        lo, hi = self.cfg.speed_range
        v = Vehicle(self.next_id, spec, lane, self.cfg.road.lane_x(lane), y,
                    float(self.rng.uniform(lo, hi)))
        self.next_id += 1
        return v

    def _spec(self) -> VehicleSpec:
        # buses are rarer than the other types
        return CATALOG[int(self.rng.choice(4, p=[0.35, 0.3, 0.2, 0.15]))]

    def _lane(self, lane: str) -> list[Vehicle]:
        return [v for v in self.vehicles if v.lane == lane]

    def _free_intervals(self, lane: str, spec: VehicleSpec) -> list[tuple[float, float]]:
        """Intervals of admissible center positions for a new vehicle in ``lane``."""
        road, gap, half = self.cfg.road, self.cfg.min_gap, spec.length / 2
        occupied = sorted((v.y - v.spec.length / 2, v.y + v.spec.length / 2)
                          for v in self._lane(lane))
        lo = half
        out = []
        for a, b in occupied:
            hi = a - gap - half
            if hi >= lo:
                out.append((lo, hi))
            lo = max(lo, b + gap + half)
        hi = road.length - half
        if hi >= lo:
            out.append((lo, hi))
        return out

    def place_initial(self, n: int):
        for _ in range(n):
            spec = self._spec()
            first = RIGHT if self.rng.random() < 0.5 else LEFT
            for lane in (first, LEFT if first == RIGHT else RIGHT):
                free = self._free_intervals(lane, spec)
                if free:
                    break
            else:
                continue
            widths = np.array([b - a for a, b in free]) + 1e-9
            a, b = free[int(self.rng.choice(len(free), p=widths / widths.sum()))]
            self.vehicles.append(self._new(lane, float(self.rng.uniform(a, b)), spec))

    def _entrance(self, lane: str, spec: VehicleSpec) -> float | None:
        half = spec.length / 2
        y = half if lane == RIGHT else self.cfg.road.length - half
        for a, b in self._free_intervals(lane, spec):
            if a - 1e-9 <= y <= b + 1e-9:
                return y
        return None

    def spawn(self, force: bool) -> bool:
        lanes = [RIGHT, LEFT] if self.rng.random() < 0.5 else [LEFT, RIGHT]
        spec = self._spec()
        for lane in lanes:
            y = self._entrance(lane, spec)
            if y is not None:
                self.vehicles.append(self._new(lane, y, spec))
                return True
        if not force:
            return False
        # both entrances blocked: merge in from a side street at the widest gap
        best = None
        for lane in lanes:
            for a, b in self._free_intervals(lane, spec):
                if best is None or b - a > best[2] - best[1]:
                    best = (lane, a, b)
        if best is None:
            return False
        lane, a, b = best
        self.vehicles.append(self._new(lane, (a + b) / 2, spec))
        return True

    def advance(self):
        dt, road, gap = self.cfg.frame_interval, self.cfg.road, self.cfg.min_gap
        moved = []
        for lane, sign in ((RIGHT, 1.0), (LEFT, -1.0)):
            # leaders first so followers see their new position
            queue = sorted(self._lane(lane), key=lambda v: -sign * v.y)
            leader = None
            for v in queue:
                y = v.y + sign * v.speed * dt
                if leader is not None:
                    limit = leader.rear - sign * (gap + v.spec.length / 2)
                    y = min(y, limit) if sign > 0 else max(y, limit)
                nv = replace(v, y=y)
                moved.append(nv)
                leader = nv
        self.vehicles = [v for v in moved if 0.0 <= v.y < road.length]
        self.vehicles.sort(key=lambda v: v.id)

    def step(self):
        self.advance()
        if len(self.vehicles) < self.cfg.max_vehicles and self.rng.random() < self.cfg.spawn_prob:
            self.spawn(force=False)
        while len(self.vehicles) < self.cfg.min_vehicles:
            if not self.spawn(force=True):
                break
        self.vehicles.sort(key=lambda v: v.id)


def detect(vehicles, config: SceneConfig, rng: np.random.Generator) -> tuple[tuple[Box3D, ...], ...]:
    """Per-camera noisy boxes in camera coordinates."""
    out = []
    for cam in config.cameras:
        boxes = []
        for v in vehicles:
            if not cam.sees(v.x, v.y):
                continue
            b = gcs_to_ccs(v.box, cam)
            if config.sigma_pos > 0 or config.sigma_size > 0:
                dx, dy, dz = rng.normal(0.0, config.sigma_pos, 3)
                sl, sw, sh = 1.0 + rng.normal(0.0, config.sigma_size, 3)
                b = replace(b, x=b.x + dx, y=b.y + dy, z=b.z + dz,
                            length=b.length * max(sl, 0.5), width=b.width * max(sw, 0.5),
                            height=b.height * max(sh, 0.5))
            boxes.append(b)
        out.append(tuple(boxes))
    return tuple(out)


def fuse(detections, vehicles, config: SceneConfig) -> tuple[Box3D, ...]:
    """Map detections to the global frame, eliminate duplicates, tag nearest vehicle."""
    gcs = [ccs_to_gcs(b, cam) for cam, boxes in zip(config.cameras, detections) for b in boxes]
    fused = eliminate(gcs, config.gamma)
    if not vehicles:
        return tuple(fused)
    tagged = []
    for b in fused:
        nearest = min(vehicles, key=lambda v: ((v.x - b.x) ** 2 + (v.y - b.y) ** 2, v.id))
        tagged.append(replace(b, vehicle_id=nearest.id))
    return tuple(tagged)


def simulate(config: SceneConfig, steps: int, seed: int | None = None) -> list[Snapshot]:
    """Run one trajectory; deterministic for a given seed."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not config.cameras:
        raise ValueError("scene needs at least one camera")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0])
    traffic = _Traffic(config, rng)
    traffic.place_initial(int(rng.integers(config.min_vehicles, config.max_vehicles + 1)))
    snaps = []
    for s in range(steps):
        if s > 0:
            traffic.step()
        vehicles = tuple(traffic.vehicles)
        dets = detect(vehicles, config, np.random.default_rng([seed, 1, s]))
        snaps.append(Snapshot(s, s * config.frame_interval, vehicles, dets,
                              fuse(dets, vehicles, config)))
    return snaps
