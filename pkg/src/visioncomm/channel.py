"""Geometric mmWave channels from scene geometry, DFT-style codebooks and beam training.

Paths come from a line-of-sight ray plus first-order image-source reflections
off vehicle faces and the building walls lining the road. Each path becomes a
rank-one term ``gain * a_r(aoa) a_t(aod)^H`` of the channel matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scene import RoadGeometry, Vehicle

SPEED_OF_LIGHT = 299_792_458.0
LOS, REFLECTION = "los", "reflection"


@dataclass(frozen=True)
class RadioConfig:
    n_bs_antennas: int = 16
    n_ue_antennas: int = 8
    carrier_hz: float = 28e9
    noise_power: float = 1.0
    p_max: tuple[float, ...] = ()
    vehicle_loss_db: float = 6.0
    wall_loss_db: float = 10.0
    max_paths: int = 25
    bs_height: float = 4.5
    ue_roof_offset: float = 0.05
    wall_offset: float = 1.0
    snr_db: float = 25.0

    def __post_init__(self):
        if self.n_bs_antennas < 1 or self.n_ue_antennas < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def power_limit(self, b: int) -> float:
        if not self.p_max:
            return 1.0
        return self.p_max[b]


@dataclass(frozen=True)
class BaseStation:
    index: int
    x: float
    y: float
    z: float
    # +1 when the array broadside faces +X (station on the low-x side of the road)
    facing: float = 1.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def stations_from_cameras(cameras, road: RoadGeometry, height: float = 4.5) -> tuple[BaseStation, ...]:
    return tuple(BaseStation(c.index, c.x, c.y, height, 1.0 if c.x < road.center_x else -1.0)
                 for c in cameras)


@dataclass(frozen=True)
class Path:
    gain: complex
    aod: float
    aoa: float
    kind: str = LOS
    bounce: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not abs(self.gain) > 0:
            raise ValueError("path gain must be nonzero")


@dataclass(frozen=True)
class ChannelMatrix:
    H: np.ndarray
    paths: tuple[Path, ...] = ()
    bs: int = -1
    vehicle: int = -1

    @property
    def frobenius_sq(self) -> float:
        return float(np.sum(np.abs(self.H) ** 2))


def steering(phi: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, unit norm."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    return np.exp(1j * np.pi * np.arange(n) * math.sin(phi)) / math.sqrt(n)


def codebook_angles(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return (2 * i - 2 - n) / (2 * n) * np.pi


@dataclass(frozen=True)
class Codebook:
    """Transmit and receive steering codebooks; pairs are numbered transmit-major."""

    n_tx: int
    n_rx: int
    tx: np.ndarray = field(repr=False)  # (N_B, N_CB), one beam per column
    rx: np.ndarray = field(repr=False)  # (N_U, N_CU)

    @classmethod
    def build(cls, n_bs_antennas: int, n_ue_antennas: int,
              n_tx: int | None = None, n_rx: int | None = None) -> "Codebook":
        n_tx = n_tx or n_bs_antennas
        n_rx = n_rx or n_ue_antennas
        tx = np.stack([steering(a, n_bs_antennas) for a in codebook_angles(n_tx)], axis=1)
        rx = np.stack([steering(a, n_ue_antennas) for a in codebook_angles(n_rx)], axis=1)
        return cls(n_tx, n_rx, tx, rx)

    @property
    def n_pairs(self) -> int:
        return self.n_tx * self.n_rx

    def pair_index(self, i_tx: int, i_rx: int) -> int:
        return i_tx * self.n_rx + i_rx

    def pair(self, index: int) -> tuple[int, int]:
        return divmod(int(index), self.n_rx)


def assemble(paths: Sequence[Path], n_bs: int, n_ue: int, bs: int = -1,
             vehicle: int = -1) -> ChannelMatrix:
    H = np.zeros((n_ue, n_bs), dtype=complex)
    for p in paths:
        H += p.gain * np.outer(steering(p.aoa, n_ue), steering(p.aod, n_bs).conj())
    return ChannelMatrix(H, tuple(paths), bs, vehicle)


def beam_gains(H: np.ndarray, cb: Codebook) -> np.ndarray:
    """|f_U^H H f_B|^2 for every pair, shape (N_CB, N_CU)."""
    return (np.abs(cb.rx.conj().T @ H @ cb.tx) ** 2).T


def beam_train(H, cb: Codebook) -> tuple[int, float]:
    """Exhaustive beam sweep; ties go to the lowest pair index."""
    H = H.H if isinstance(H, ChannelMatrix) else H
    g = beam_gains(H, cb).ravel()
    k = int(np.argmax(g))
    return k, float(g[k])


def rsrp_table(channels, beams, cb: Codebook) -> np.ndarray:
    """RSRP[b, u, b2, u2]: power at user u2 (receive beam towards b2) from BS b serving u.

    ``channels[b][u]`` is H between BS b and user u, ``beams[b][u]`` the pair index
    found by :func:`beam_train` on it.
    """
    B, U = len(channels), len(channels[0])
    f_b = np.empty((B, U, cb.tx.shape[0]), dtype=complex)
    f_u = np.empty((B, U, cb.rx.shape[0]), dtype=complex)
    for b in range(B):
        for u in range(U):
            i, j = cb.pair(beams[b][u])
            f_b[b, u], f_u[b, u] = cb.tx[:, i], cb.rx[:, j]
    H = np.array([[c.H if isinstance(c, ChannelMatrix) else c for c in row] for row in channels])
    # H[b, u2] applied to f_b[b, u], combined with f_u[b2, u2]
    y = np.einsum("cwr,bwrt,but->bucw", f_u.conj(), H, f_b)
    return np.abs(y) ** 2


# -- ray geometry -------------------------------------------------------------

def _segment_hits_box(p0, p1, lo, hi, eps=1e-9) -> bool:
    d = p1 - p0
    t0, t1 = eps, 1.0 - eps
    for k in range(3):
        if abs(d[k]) < 1e-12:
            if p0[k] <= lo[k] or p0[k] >= hi[k]:
                return False
            continue
        a = (lo[k] - p0[k]) / d[k]
        b = (hi[k] - p0[k]) / d[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
        if t0 >= t1:
            return False
    return True


def _box_bounds(v: Vehicle):
    s = v.spec
    lo = np.array([v.x - s.width / 2, v.y - s.length / 2, 0.0])
    hi = np.array([v.x + s.width / 2, v.y + s.length / 2, s.height])
    return lo, hi


def _blocked(p0, p1, obstacles) -> bool:
    return any(_segment_hits_box(p0, p1, lo, hi) for lo, hi in obstacles)


def _bs_angle(d: np.ndarray, bs: BaseStation) -> float:
    # array along Y, broadside across the road
    return math.atan2(d[1], bs.facing * d[0])


def _ue_angle(d: np.ndarray, heading: float) -> float:
    along = d[0] * math.sin(heading) + d[1] * math.cos(heading)
    across = d[0] * math.cos(heading) - d[1] * math.sin(heading)
    return math.atan2(along, across)


def _reflectors(vehicles, exclude: int, road: RoadGeometry, radio: RadioConfig):
    """Vertical reflecting rectangles: (axis, coord, normal_sign, lo, hi, zmax, loss_db, owner)."""
    out = []
    for v in vehicles:
        if v.id == exclude:
            continue
        s = v.spec
        ylo, yhi = v.y - s.length / 2, v.y + s.length / 2
        xlo, xhi = v.x - s.width / 2, v.x + s.width / 2
        out.append((0, xlo, -1.0, ylo, yhi, s.height, radio.vehicle_loss_db, v.id))
        out.append((0, xhi, 1.0, ylo, yhi, s.height, radio.vehicle_loss_db, v.id))
        out.append((1, ylo, -1.0, xlo, xhi, s.height, radio.vehicle_loss_db, v.id))
        out.append((1, yhi, 1.0, xlo, xhi, s.height, radio.vehicle_loss_db, v.id))
    far = 1e4
    out.append((0, -radio.wall_offset, 1.0, -far, far, road.wall_height, radio.wall_loss_db, None))
    out.append((0, road.width + radio.wall_offset, -1.0, -far, far, road.wall_height,
                radio.wall_loss_db, None))
    return out


def ue_position(vehicle: Vehicle, radio: RadioConfig) -> np.ndarray:
    return np.array([vehicle.x, vehicle.y, vehicle.spec.height + radio.ue_roof_offset])


def trace_paths(bs: BaseStation, vehicle: Vehicle, vehicles: Sequence[Vehicle],
                road: RoadGeometry, radio: RadioConfig, rng: np.random.Generator) -> list[Path]:
    """LoS plus first-order reflections, strongest ``radio.max_paths`` kept.

    Returns an empty list when every candidate ray is blocked.
    """
    tx = bs.position
    rx = ue_position(vehicle, radio)
    lam = radio.wavelength
    boxes = {v.id: _box_bounds(v) for v in vehicles}
    found = []  # (amplitude, aod, aoa, kind, bounce)

    if not _blocked(tx, rx, list(boxes.values())):
        d = float(np.linalg.norm(rx - tx))
        found.append((lam / (4 * math.pi * d), _bs_angle(rx - tx, bs),
                      _ue_angle(tx - rx, vehicle.heading), LOS, None))

    for axis, c, sign, lo, hi, zmax, loss_db, owner in _reflectors(vehicles, vehicle.id, road, radio):
        # both ends must sit in front of the reflecting face
        if sign * (tx[axis] - c) <= 0 or sign * (rx[axis] - c) <= 0:
            continue
        image = tx.copy()
        image[axis] = 2 * c - tx[axis]
        t = (c - image[axis]) / (rx[axis] - image[axis])
        q = image + t * (rx - image)
        other = 1 - axis
        if not (lo <= q[other] <= hi and 0.0 <= q[2] <= zmax):
            continue
        obstacles = [b for vid, b in boxes.items() if vid != owner]
        if _blocked(tx, q, obstacles) or _blocked(q, rx, obstacles):
            continue
        d = float(np.linalg.norm(q - tx) + np.linalg.norm(rx - q))
        amp = lam / (4 * math.pi * d) * 10 ** (-loss_db / 20)
        found.append((amp, _bs_angle(q - tx, bs), _ue_angle(q - rx, vehicle.heading),
                      REFLECTION, tuple(float(x) for x in q)))

    phases = rng.uniform(0.0, 2 * math.pi, len(found))
    order = sorted(range(len(found)), key=lambda k: -found[k][0])[: radio.max_paths]
    return [Path(complex(found[k][0] * np.exp(1j * phases[k])), found[k][1], found[k][2],
                 found[k][3], found[k][4]) for k in order]


def channel_rng(seed: int, trajectory: int, step: int, bs: int, vehicle: int) -> np.random.Generator:
    """Per-link generator so channel synthesis does not depend on evaluation order."""
    return np.random.default_rng([seed, 7, trajectory, step, bs, vehicle])


def calibrate_power(fro_sq_sums: Sequence[float], n_links: int, noise_power: float,
                    snr_db: float) -> tuple[float, ...]:
    """Per-BS power limits so that P_max,b * mean ||H_b||_F^2 / sigma^2 hits ``snr_db``.

    ``fro_sq_sums[b]`` is the sum of ||H||_F^2 over all (snapshot, vehicle) links of BS b
    and ``n_links`` the number of such links.
    """
    target = 10 ** (snr_db / 10)
    out = []
    for s in fro_sq_sums:
        if s <= 0:
            raise ValueError("cannot calibrate power against an all-zero channel set")
        out.append(target * noise_power * n_links / s)
    return tuple(out)


def average_snr_db(p_max: Sequence[float], fro_sq_sums: Sequence[float], n_links: int,
                   noise_power: float) -> list[float]:
    return [10 * math.log10(p * s / (noise_power * n_links)) for p, s in zip(p_max, fro_sq_sums)]
