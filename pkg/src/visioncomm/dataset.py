"""Dataset generation and the newline-delimited JSON dataset format.

A dataset directory holds ``manifest.json`` plus one ``<split>.ndjson`` per
split. Each line is one record with a ``kind`` field:

- ``header``: schema version, split name, trajectory ids, calibrated power limits, config;
- ``snapshot``: vehicles, fused boxes, per-(BS, vehicle) beam index and RSRP and,
  at beam-coherence moments, the full RSRP table over the vehicles present;
- ``uman``: one matching sample (end moment, vehicle, true box, beam sequence);
- ``vran``: one allocation sample (users, their boxes, sparse USDF and label tensors,
  BTRAM solution).

Grid tensors are stored sparsely and rebuilt from boxes on load.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .allocation import btram
from .channel import (Codebook, assemble, beam_train, calibrate_power, channel_rng, rsrp_table,
                      stations_from_cameras, trace_paths)
from .config import ExperimentConfig
from .features import encode_bdf, encode_labels, encode_usdf, render_heatmap, user_cells
from .geometry import GCS, Box3D
from .matching import nearest_box
from .neural.training import atomic_write_bytes
from .scene import CATALOG, Vehicle, simulate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "valid", "test")
_SPECS = {s.name: s for s in CATALOG}


def split_of(cfg: ExperimentConfig) -> dict[int, str]:
    """Random trajectory-level split; no trajectory feeds two splits."""
    perm = np.random.default_rng([cfg.seed, 11]).permutation(cfg.n_trajectories)
    out = {}
    for rank, c in enumerate(perm):
        if rank < cfg.c_train:
            out[int(c)] = "train"
        elif rank < cfg.c_train + cfg.c_valid:
            out[int(c)] = "valid"
        else:
            out[int(c)] = "test"
    return out


def trajectory_seed(cfg: ExperimentConfig, traj: int) -> int:
    return int(np.random.default_rng([cfg.seed, 3, traj]).integers(2 ** 31))


@dataclass
class Moment:
    traj: int
    step: int
    time: float
    vehicles: tuple[Vehicle, ...]
    fused: tuple[Box3D, ...]
    beams: list[dict[int, tuple[int, float]]]  # per BS: vehicle id -> (pair index, RSRP)
    rsrp: np.ndarray | None = None  # (B, Q, B, Q) over ``vehicles`` order, beam-coherence moments only

    @property
    def vehicle_ids(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.vehicles)

    def truth_box(self, vid: int) -> int:
        v = next(v for v in self.vehicles if v.id == vid)
        return nearest_box(self.fused, v.x, v.y)[0]


@dataclass
class TrajectoryData:
    traj: int
    moments: list[Moment]
    fro_sums: list[float]
    n_links: int


def simulate_trajectory(cfg: ExperimentConfig, traj: int) -> TrajectoryData:
    """Scene, detections, fusion, channels and beam training for one trajectory."""
    sc = cfg.scene_config()
    radio = cfg.radio_config()
    cb = Codebook.build(radio.n_bs_antennas, radio.n_ue_antennas)
    stations = stations_from_cameras(sc.cameras, sc.road, radio.bs_height)
    snaps = simulate(sc, cfg.steps, seed=trajectory_seed(cfg, traj))
    fro = [0.0] * len(stations)
    n_links = 0
    moments = []
    for snap in snaps:
        beams = []
        channels = []
        for bs in stations:
            row, per_bs = [], {}
            for v in snap.vehicles:
                paths = trace_paths(bs, v, snap.vehicles, sc.road, radio,
                                    channel_rng(cfg.seed, traj, snap.step, bs.index, v.id))
                ch = assemble(paths, radio.n_bs_antennas, radio.n_ue_antennas, bs.index, v.id)
                fro[bs.index] += ch.frobenius_sq
                idx, g = beam_train(ch, cb)
                per_bs[v.id] = (idx, g)
                row.append(ch.H)
            beams.append(per_bs)
            channels.append(row)
        n_links += len(snap.vehicles)
        table = None
        if snap.step % cfg.alpha == 0 and snap.vehicles:
            idx = [[beams[b][v.id][0] for v in snap.vehicles] for b in range(len(stations))]
            table = rsrp_table(channels, idx, cb)
        moments.append(Moment(traj, snap.step, snap.time, snap.vehicles, snap.fused, beams, table))
    return TrajectoryData(traj, moments, fro, n_links)


def _inside(grid, box: Box3D) -> bool:
    return grid.cell_of(box.x, box.y) is not None


def uman_samples(cfg: ExperimentConfig, data: TrajectoryData) -> list[dict]:
    """Matching samples: a vehicle present at all M_max history moments, with company."""
    a, mm = cfg.alpha, cfg.m_max
    heat = cfg.heatmap_grid()
    out = []
    by_step = {m.step: m for m in data.moments}
    for s in range((mm - 1) * a, cfg.steps, cfg.uman_stride):
        end = by_step[s]
        if len(end.vehicles) <= 1 or len(end.fused) <= 1:
            continue
        history = [by_step[s - (mm - 1 - k) * a] for k in range(mm)]
        for v in end.vehicles:
            if not all(v.id in h.beams[cfg.uman_bs] for h in history):
                continue
            truth = end.truth_box(v.id)
            if not _inside(heat, end.fused[truth]):
                continue
            out.append({
                "kind": "uman", "id": f"{data.traj}-{s}-{v.id}", "traj": data.traj, "step": s,
                "vehicle": v.id, "truth": truth, "n_boxes": len(end.fused),
                "beams": [h.beams[cfg.uman_bs][v.id][0] for h in history],
            })
    return out


def _sparse(values: np.ndarray) -> list[list]:
    idx = np.argwhere(np.any(values != 0, axis=-1))
    return [[int(i), int(j)] + [float(x) for x in values[i, j]] for i, j in idx]


def vran_samples(cfg: ExperimentConfig, data: TrajectoryData, p_max) -> list[dict]:
    """Allocation samples at beam-coherence moments: every U-subset of the vehicles."""
    radio = cfg.radio_config(p_max)
    grid, norms = cfg.usdf_grid(), cfg.norms()
    out = []
    rng = np.random.default_rng([cfg.seed, 5, data.traj])
    for m in data.moments:
        if m.rsrp is None:
            continue
        Q = len(m.vehicles)
        truth = [m.truth_box(v.id) for v in m.vehicles]
        for U in cfg.users:
            if Q < U:
                continue
            combos = list(itertools.combinations(range(Q), U))
            if cfg.max_combos and len(combos) > cfg.max_combos:
                keep = sorted(rng.choice(len(combos), cfg.max_combos, replace=False))
                combos = [combos[k] for k in keep]
            for n, combo in enumerate(combos):
                boxes = [truth[q] for q in combo]
                if not all(_inside(grid, m.fused[k]) for k in boxes):
                    continue
                sub = m.rsrp[np.ix_(range(m.rsrp.shape[0]), combo, range(m.rsrp.shape[0]), combo)]
                sol = btram(sub, U, radio.noise_power, p_max)
                usdf = encode_usdf(m.fused, boxes, grid, norms)
                cells = user_cells(m.fused, boxes, grid)
                ob, op = encode_labels(sol.b, sol.P, p_max, cells, grid, len(p_max))
                out.append({
                    "kind": "vran", "id": f"{data.traj}-{m.step}-{U}-{n}", "traj": data.traj,
                    "step": m.step, "U": U, "combo": list(combo),
                    "users": [m.vehicles[q].id for q in combo], "user_boxes": boxes,
                    "b": list(sol.b), "P": [float(p) for p in sol.P], "rate": sol.rate,
                    "usdf": _sparse(usdf.values),
                    "ob": [[i, j, int(b)] for i, j, b in np.argwhere(ob.values == 1.0).tolist()],
                    "op": [r[:3] for r in _sparse(op.values)],
                })
    return out


def moment_record(m: Moment) -> dict:
    rec = {
        "kind": "snapshot", "traj": m.traj, "step": m.step, "time": m.time,
        "vehicles": [[v.id, v.spec.name, v.lane, v.x, v.y, v.speed] for v in m.vehicles],
        "fused": [[b.length, b.width, b.height, b.x, b.y, b.z, b.azimuth, b.vehicle_id] for b in m.fused],
        "beams": [[[vid, idx, g] for vid, (idx, g) in sorted(per.items())] for per in m.beams],
    }
    if m.rsrp is not None:
        rec["rsrp_shape"] = list(m.rsrp.shape)
        rec["rsrp"] = [float(x) for x in m.rsrp.ravel()]
    return rec


def moment_from_record(rec: dict) -> Moment:
    vehicles = tuple(Vehicle(int(i), _SPECS[name], lane, float(x), float(y), float(sp))
                     for i, name, lane, x, y, sp in rec["vehicles"])
    fused = tuple(Box3D(l, w, h, x, y, z, az, GCS, None if vid is None else int(vid))
                  for l, w, h, x, y, z, az, vid in rec["fused"])
    beams = [{int(vid): (int(idx), float(g)) for vid, idx, g in per} for per in rec["beams"]]
    rsrp = None
    if "rsrp" in rec:
        rsrp = np.array(rec["rsrp"], float).reshape(rec["rsrp_shape"])
    return Moment(rec["traj"], rec["step"], rec["time"], vehicles, fused, beams, rsrp)


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _run(fn, args, threads: int):
    if threads > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _samples(cfg, data, p_max):
    return uman_samples(cfg, data), vran_samples(cfg, data, p_max)


def generate(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> dict:
    """Generate the dataset into ``out_dir``; returns the manifest."""
    split = split_of(cfg)
    trajs = list(range(cfg.n_trajectories))
    data = _run(simulate_trajectory, [(cfg, c) for c in trajs], threads)
    n_bs = len(data[0].fro_sums)
    fro = [sum(d.fro_sums[b] for d in data) for b in range(n_bs)]
    n_links = sum(d.n_links for d in data)
    p_max = calibrate_power(fro, n_links, cfg.radio.noise_power, cfg.radio.snr_db)
    samples = _run(_samples, [(cfg, d, p_max) for d in data], threads)

    counts = {}
    for name in SPLITS:
        members = [c for c in trajs if split[c] == name]
        lines = [_dumps({"kind": "header", "schema_version": SCHEMA_VERSION, "split": name,
                         "trajectories": members, "p_max": list(p_max), "config": cfg.to_dict()})]
        n_u = n_v = 0
        for c in members:
            lines.extend(_dumps(moment_record(m)) for m in data[c].moments)
            um, vr = samples[c]
            lines.extend(_dumps(r) for r in um)
            lines.extend(_dumps(r) for r in vr)
            n_u += len(um)
            n_v += len(vr)
        atomic_write_bytes(os.path.join(out_dir, f"{name}.ndjson"), ("\n".join(lines) + "\n").encode())
        counts[name] = {"trajectories": members, "uman": n_u, "vran": n_v}
    manifest = {"schema_version": SCHEMA_VERSION, "p_max": list(p_max), "fro_sums": fro,
                "n_links": n_links, "splits": counts}
    atomic_write_bytes(os.path.join(out_dir, "manifest.json"),
                       (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode())
    return manifest


# -- loading -------------------------------------------------------------------


@dataclass
class SplitData:
    name: str
    header: dict
    moments: dict[tuple[int, int], Moment] = field(default_factory=dict)
    uman: list[dict] = field(default_factory=list)
    vran: list[dict] = field(default_factory=list)

    @property
    def p_max(self) -> tuple[float, ...]:
        return tuple(self.header["p_max"])


def load_split(out_dir: str, name: str) -> SplitData:
    path = os.path.join(out_dir, f"{name}.ndjson")
    split = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "header":
                if rec.get("schema_version") != SCHEMA_VERSION:
                    raise ValueError(f"{path}: unsupported schema version {rec.get('schema_version')}")
                split = SplitData(name, rec)
            elif split is None:
                raise ValueError(f"{path}:{lineno}: record before header")
            elif kind == "snapshot":
                m = moment_from_record(rec)
                split.moments[(m.traj, m.step)] = m
            elif kind == "uman":
                split.uman.append(rec)
            elif kind == "vran":
                split.vran.append(rec)
            else:
                raise ValueError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if split is None:
        raise ValueError(f"{path}: empty dataset file")
    return split


def load_manifest(out_dir: str) -> dict:
    with open(os.path.join(out_dir, "manifest.json")) as f:
        return json.load(f)


# -- tensors -------------------------------------------------------------------


class TensorCache:
    """Builds network inputs and targets for one split, caching per-moment BDFs."""

    def __init__(self, cfg: ExperimentConfig, split: SplitData):
        self.cfg, self.split = cfg, split
        self.bdf_grid, self.heat_grid, self.usdf_grid = cfg.bdf_grid(), cfg.heatmap_grid(), cfg.usdf_grid()
        self.norms = cfg.norms()
        self._bdf: dict[tuple[int, int], np.ndarray] = {}
        self.ignored = 0

    def bdf(self, traj: int, step: int) -> np.ndarray:
        key = (traj, step)
        if key not in self._bdf:
            t = encode_bdf(self.split.moments[key].fused, self.bdf_grid, self.norms)
            self.ignored += t.ignored
            self._bdf[key] = t.values.astype(np.float32)
        return self._bdf[key]

    def bdf_stack(self, rec: dict, m: int) -> np.ndarray:
        a, s = self.cfg.alpha, rec["step"]
        return np.concatenate([self.bdf(rec["traj"], s - (m - 1 - k) * a) for k in range(m)], axis=-1)

    def uman_batch(self, recs: list[dict], m: int):
        bdf = np.stack([self.bdf_stack(r, m) for r in recs])
        beams = np.array([r["beams"][-m:] for r in recs], dtype=np.int64)
        return bdf, beams

    def heatmaps(self, recs: list[dict]) -> np.ndarray:
        out = []
        for r in recs:
            box = self.split.moments[(r["traj"], r["step"])].fused[r["truth"]]
            out.append(render_heatmap(box, self.heat_grid, self.cfg.gamma_tilde).values[..., 0])
        return np.stack(out).astype(np.float32)

    def boxes(self, rec: dict) -> tuple[Box3D, ...]:
        return self.split.moments[(rec["traj"], rec["step"])].fused

    def usdf(self, fused, user_boxes) -> np.ndarray:
        return encode_usdf(fused, user_boxes, self.usdf_grid, self.norms).values.astype(np.float32)

    def vran_batch(self, recs: list[dict]):
        usdf, ob, op, mask = [], [], [], []
        p_max = self.split.p_max
        for r in recs:
            fused = self.boxes(r)
            z = self.usdf(fused, r["user_boxes"])
            cells = user_cells(fused, r["user_boxes"], self.usdf_grid)
            tb, tp = encode_labels(r["b"], r["P"], p_max, cells, self.usdf_grid, len(p_max))
            usdf.append(z)
            ob.append(tb.values)
            op.append(tp.values)
            mask.append(z[..., 3] > 0)
        return (np.stack(usdf), np.stack(ob).astype(np.float32), np.stack(op).astype(np.float32),
                np.stack(mask))
