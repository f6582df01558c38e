"""Experiment configuration: one JSON document drives dataset generation, training and evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

from .channel import RadioConfig
from .features import GridSpec, SizeNorms
from .neural.models import McummConfig, UmanConfig, VranConfig
from .neural.training import TrainConfig
from .scene import RoadGeometry, SceneConfig, crossroad_cameras


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneParams:
    min_vehicles: int = 3
    max_vehicles: int = 8
    speed_min: float = 8.0
    speed_max: float = 14.0
    min_gap: float = 2.0
    spawn_prob: float = 0.04
    sigma_pos: float = 0.2
    sigma_size: float = 0.05
    frame_interval: float = 0.05
    detect_stride: int = 5
    n_stations: int = 4  # camera/BS sites used, taken in corner order


@dataclass(frozen=True)
class RadioParams:
    n_bs_antennas: int = 16
    n_ue_antennas: int = 8
    carrier_hz: float = 28e9
    noise_power: float = 1.0
    vehicle_loss_db: float = 6.0
    wall_loss_db: float = 10.0
    max_paths: int = 25
    snr_db: float = 25.0


@dataclass(frozen=True)
class GridParams:
    bdf_nx: int = 40
    bdf_ny: int = 160
    heatmap_factor: int = 2  # heatmap cell = factor x BDF cell
    usdf_factor: int = 2  # USDF cell = factor x BDF cell, so the USDF grid tiles the region


@dataclass(frozen=True)
class NetParams:
    uman_bdf_filters: tuple[int, ...] = (8, 8, 8)
    uman_beam_filters: tuple[int, ...] = (8, 8, 8)
    uman_head_filters: tuple[int, ...] = (8, 8, 1)
    uman_embed: int = 16
    uman_hidden: int = 32
    uman_recurrent: bool = True
    mcumm_hidden: tuple[int, ...] = (128, 48)
    o_max: int = 12
    vran_trunk_filters: tuple[int, ...] = (16, 16, 16, 16, 16)
    vran_b_filters: tuple[int, ...] = (16, 16)  # the final B-wide layer is appended
    vran_p_filters: tuple[int, ...] = (16, 16)  # the final 1-wide layer is appended


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene: SceneParams = field(default_factory=SceneParams)
    radio: RadioParams = field(default_factory=RadioParams)
    grids: GridParams = field(default_factory=GridParams)
    nets: NetParams = field(default_factory=NetParams)
    gamma: float = 1.0 / 3.0
    gamma_tilde: float = 0.3
    m_values: tuple[int, ...] = (1, 3, 5)
    mcumm_m: int = 1
    users: tuple[int, ...] = (2, 3, 4)
    c_train: int = 8
    c_valid: int = 1
    c_test: int = 1
    steps: int = 100
    uman_stride: int = 1  # steps between UMAN sample end points
    uman_bs: int = 0  # BS whose beams feed the matcher
    max_combos: int = 0  # 0 keeps every user combination
    uman_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=3, batch_size=16, lr=2e-3))
    mcumm_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=3, batch_size=16, lr=1e-3))
    vran_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=6, batch_size=16, lr=2e-3))

    def __post_init__(self):
        self.validate()

    # -- derived objects ---------------------------------------------------

    @property
    def n_trajectories(self) -> int:
        return self.c_train + self.c_valid + self.c_test

    @property
    def m_max(self) -> int:
        return max(max(self.m_values), self.mcumm_m)

    @property
    def alpha(self) -> int:
        return self.scene.detect_stride

    def road(self) -> RoadGeometry:
        return RoadGeometry()

    def scene_config(self) -> SceneConfig:
        s = self.scene
        if not 1 <= s.n_stations <= 4:
            raise ConfigError("n_stations must lie in [1, 4]")
        road = self.road()
        return SceneConfig(road=road, cameras=crossroad_cameras(road)[:s.n_stations],
                           min_vehicles=s.min_vehicles, max_vehicles=s.max_vehicles,
                           speed_range=(s.speed_min, s.speed_max), min_gap=s.min_gap,
                           spawn_prob=s.spawn_prob, sigma_pos=s.sigma_pos, sigma_size=s.sigma_size,
                           frame_interval=s.frame_interval, detect_stride=s.detect_stride,
                           gamma=self.gamma, seed=self.seed)

    def radio_config(self, p_max: tuple[float, ...] = ()) -> RadioConfig:
        r = self.radio
        return RadioConfig(n_bs_antennas=r.n_bs_antennas, n_ue_antennas=r.n_ue_antennas,
                           carrier_hz=r.carrier_hz, noise_power=r.noise_power, p_max=tuple(p_max),
                           vehicle_loss_db=r.vehicle_loss_db, wall_loss_db=r.wall_loss_db,
                           max_paths=r.max_paths, snr_db=r.snr_db)

    def bdf_grid(self) -> GridSpec:
        road, g = self.road(), self.grids
        return GridSpec(0.0, 0.0, road.length / g.bdf_ny, road.width / g.bdf_nx, g.bdf_nx, g.bdf_ny)

    def heatmap_grid(self) -> GridSpec:
        return self.bdf_grid().scaled(self.grids.heatmap_factor)

    def usdf_grid(self) -> GridSpec:
        return self.bdf_grid().scaled(self.grids.usdf_factor)

    def norms(self) -> SizeNorms:
        return SizeNorms.from_catalog()

    @property
    def n_bs(self) -> int:
        return self.scene.n_stations

    @property
    def n_pairs(self) -> int:
        return self.radio.n_bs_antennas * self.radio.n_ue_antennas

    def uman_config(self, m: int) -> UmanConfig:
        n = self.nets
        g = self.bdf_grid()
        return UmanConfig(m=m, grid=(g.n_x, g.n_y), n_pairs=self.n_pairs, bdf_filters=n.uman_bdf_filters,
                          beam_filters=n.uman_beam_filters, head_filters=n.uman_head_filters,
                          embed_dim=n.uman_embed, hidden=n.uman_hidden, recurrent=n.uman_recurrent)

    def mcumm_config(self) -> McummConfig:
        return McummConfig(self.uman_config(self.mcumm_m), self.nets.mcumm_hidden, self.nets.o_max)

    def vran_config(self) -> VranConfig:
        n = self.nets
        g = self.usdf_grid()
        return VranConfig(n_bs=self.n_bs, grid=(g.n_x, g.n_y), trunk_filters=n.vran_trunk_filters,
                          b_filters=n.vran_b_filters + (self.n_bs,), p_filters=n.vran_p_filters + (1,))

    # -- checks --------------------------------------------------------------

    def validate(self):
        try:
            sc = self.scene_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not 0 < self.gamma < 1 or not 0 < self.gamma_tilde < 1:
            raise ConfigError("gamma and gamma_tilde must lie in (0, 1)")
        if min(self.m_values) < 1 or self.mcumm_m < 1:
            raise ConfigError("sequence lengths must be >= 1")
        if self.c_train < 1 or self.c_valid < 0 or self.c_test < 1:
            raise ConfigError("need at least one training and one test trajectory")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.uman_stride < 1:
            raise ConfigError("uman_stride must be >= 1")
        if not 0 <= self.uman_bs < len(sc.cameras):
            raise ConfigError(f"uman_bs {self.uman_bs} is not a BS index")
        if max(self.users) > len(sc.cameras) or min(self.users) < 1:
            raise ConfigError(f"user counts {self.users} must lie in [1, B={len(sc.cameras)}]")
        if self.max_vehicles_boxes() > self.nets.o_max:
            raise ConfigError("o_max must cover the largest possible box count")
        g = self.grids
        for f in (g.heatmap_factor, g.usdf_factor):
            if f < 1 or g.bdf_nx % f or g.bdf_ny % f:
                raise ConfigError(f"grid factor {f} must divide the BDF grid {g.bdf_nx}x{g.bdf_ny}")
        if g.heatmap_factor != 2:
            raise ConfigError("the matcher pools by 2, so the heatmap cell must be twice the BDF cell")
        bdf = self.bdf_grid()
        road = self.road()
        w, l = bdf.extent
        if not (math.isclose(w, road.width) and math.isclose(l, road.length)):
            raise ConfigError("BDF grid must tile the monitored region")
        try:
            self.uman_config(1)
            self.vran_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def max_vehicles_boxes(self) -> int:
        return self.scene.max_vehicles

    # -- (de)serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        nested = {"scene": SceneParams, "radio": RadioParams, "grids": GridParams, "nets": NetParams,
                  "uman_train": TrainConfig, "mcumm_train": TrainConfig, "vran_train": TrainConfig}
        base = cls()
        kwargs = {}
        try:
            for k, v in d.items():
                if k in nested:
                    sub = getattr(base, k)
                    if not isinstance(v, dict):
                        raise ConfigError(f"{k} must be an object")
                    bad = set(v) - {f.name for f in fields(nested[k])}
                    if bad:
                        raise ConfigError(f"unknown keys in {k}: {sorted(bad)}")
                    kwargs[k] = replace(sub, **{kk: _tuplify(vv) for kk, vv in v.items()})
                else:
                    kwargs[k] = _tuplify(v)
            return replace(base, **kwargs)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data)


def _tuplify(v):
    return tuple(v) if isinstance(v, list) else v
