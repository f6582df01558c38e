"""Training, evaluation and reporting on top of a generated dataset.

A run directory holds ``data/`` (dataset), ``models/`` (checkpoints and loss
curves), ``metrics/`` (CSV reports) and ``plots/`` (SVG figures).
"""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .allocation import atrr, btram, nbbram, rram, total_rate, vbram_from_outputs
from .channel import stations_from_cameras
from .config import ExperimentConfig
from .dataset import SplitData, TensorCache, load_split
from .features import user_cells
from .matching import (MatchResult, class_label, match_from_heatmap, match_from_logits, match_rumm,
                       rumm_expectation, umac)
from .neural import (McummModel, UmanModel, VranModel, focal_loss, load_checkpoint, save_checkpoint,
                     softmax_cross_entropy, train, vran_b_loss, vran_p_loss)
from .neural.training import TrainResult, atomic_write_bytes, train_config_dict

log = logging.getLogger(__name__)


def data_dir(run: str) -> str:
    return os.path.join(run, "data")


def models_dir(run: str) -> str:
    return os.path.join(run, "models")


def metrics_dir(run: str) -> str:
    return os.path.join(run, "metrics")


def plots_dir(run: str) -> str:
    return os.path.join(run, "plots")


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.default_rng([seed, *tags]).integers(2 ** 31))


def write_csv(path: str, header: list[str], rows: list[list]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())


def _fmt(x: float) -> str:
    return f"{x:.10g}"



# -- training ------------------------------------------------------------------


class _UmanTargets:
    """Lazily built UMAN/MCUMM batches for one split."""

    def __init__(self, cfg: ExperimentConfig, split: SplitData):
        self.cache = TensorCache(cfg, split)
        self.recs = split.uman
        self._heat: dict[int, np.ndarray] = {}

    def inputs(self, idx, m):
        return self.cache.uman_batch([self.recs[i] for i in idx], m)

    def heatmaps(self, idx):
        missing = [i for i in idx if i not in self._heat]
        if missing:
            for i, h in zip(missing, self.cache.heatmaps([self.recs[i] for i in missing])):
                self._heat[i] = h
        return np.stack([self._heat[i] for i in idx])

    def classes(self, idx):
        return np.array([class_label(self.cache.boxes(self.recs[i]), self.recs[i]["truth"]) for i in idx])


def _split_objective(train_t, valid_t, step):
    """Route each batch to the split it was drawn from via a split flag column."""
    def objective(model, batch, backward):
        t = train_t if batch["split"][0] == 0 else valid_t
        return step(model, t, batch["idx"], backward)
    return objective


def _split_data(n: int, flag: int) -> dict[str, np.ndarray]:
    return {"idx": np.arange(n), "split": np.full(n, flag)}


def _train_and_save(model, objective, n_train, n_valid, tcfg, path, kind, config, extra):
    res = train(model, objective, _split_data(n_train, 0), _split_data(n_valid, 1) if n_valid else None, tcfg)
    save_checkpoint(path, model, kind, config, {**extra, "best_epoch": res.best_epoch,
                                                "train": train_config_dict(tcfg)})
    atomic_write_bytes(path.replace(".npz", "_curve.csv"), res.to_csv().encode())
    return res


def _load_splits(cfg: ExperimentConfig, run: str):
    train_s = load_split(data_dir(run), "train")
    valid_s = load_split(data_dir(run), "valid")
    return train_s, valid_s


def train_uman(cfg: ExperimentConfig, run: str, m: int, splits=None) -> TrainResult:
    train_s, valid_s = splits or _load_splits(cfg, run)
    if not train_s.uman:
        raise ValueError("training split has no UMAN samples")
    tr, va = _UmanTargets(cfg, train_s), _UmanTargets(cfg, valid_s)
    tcfg = replace(cfg.uman_train, seed=derive_seed(cfg.seed, 21, m))
    model = UmanModel(cfg.uman_config(m), seed=derive_seed(cfg.seed, 22, m))

    def step(model, t, idx, backward):
        bdf, beams = t.inputs(idx, m)
        loss, g = focal_loss(model.forward(bdf, beams), t.heatmaps(idx), tcfg.beta, tcfg.eta)
        if backward:
            model.backward(g)
        return loss

    log.info("training UMAN M=%d on %d samples", m, len(train_s.uman))
    return _train_and_save(model, _split_objective(tr, va, step), len(train_s.uman), len(valid_s.uman), tcfg,
                           uman_path(run, m), "uman", cfg.uman_config(m).to_dict(), {"m": m})


def train_mcumm(cfg: ExperimentConfig, run: str, splits=None) -> TrainResult:
    train_s, valid_s = splits or _load_splits(cfg, run)
    if not train_s.uman:
        raise ValueError("training split has no UMAN samples")
    tr, va = _UmanTargets(cfg, train_s), _UmanTargets(cfg, valid_s)
    m = cfg.mcumm_m
    tcfg = replace(cfg.mcumm_train, seed=derive_seed(cfg.seed, 23))
    mc = cfg.mcumm_config()
    model = McummModel(mc, seed=derive_seed(cfg.seed, 24))

    def step(model, t, idx, backward):
        bdf, beams = t.inputs(idx, m)
        loss, g = softmax_cross_entropy(model.forward(bdf, beams), t.classes(idx))
        if backward:
            model.backward(g)
        return loss

    log.info("training MCUMM M=%d on %d samples", m, len(train_s.uman))
    return _train_and_save(model, _split_objective(tr, va, step), len(train_s.uman), len(valid_s.uman), tcfg,
                           mcumm_path(run), "mcumm", mc.to_dict(), {"m": m})


class _VranTargets:
    def __init__(self, cfg: ExperimentConfig, split: SplitData):
        self.cache = TensorCache(cfg, split)
        self.recs = split.vran

    def batch(self, idx):
        return self.cache.vran_batch([self.recs[i] for i in idx])


def train_vran(cfg: ExperimentConfig, run: str, splits=None) -> TrainResult:
    train_s, valid_s = splits or _load_splits(cfg, run)
    if not train_s.vran:
        raise ValueError("training split has no VRAN samples")
    tr, va = _VranTargets(cfg, train_s), _VranTargets(cfg, valid_s)
    tcfg = replace(cfg.vran_train, seed=derive_seed(cfg.seed, 25))
    vc = cfg.vran_config()
    model = VranModel(vc, seed=derive_seed(cfg.seed, 26))

    def step(model, t, idx, backward):
        usdf, ob, op, mask = t.batch(idx)
        pb, pp = model.forward(usdf)
        lb, gb = vran_b_loss(pb, ob, mask, tcfg.beta)
        lp, gp = vran_p_loss(pp, op, mask, tcfg.beta)
        if backward:
            model.backward(gb, gp)
        return lb + lp

    log.info("training VRAN on %d samples", len(train_s.vran))
    return _train_and_save(model, _split_objective(tr, va, step), len(train_s.vran), len(valid_s.vran), tcfg,
                           vran_path(run), "vran", vc.to_dict(), {})


def uman_path(run: str, m: int) -> str:
    return os.path.join(models_dir(run), f"uman_m{m}.npz")


def mcumm_path(run: str) -> str:
    return os.path.join(models_dir(run), "mcumm.npz")


def vran_path(run: str) -> str:
    return os.path.join(models_dir(run), "vran.npz")


def _restore(model, path: str, kind: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint {path}; train it first")
    manifest, values = load_checkpoint(path)
    if manifest["kind"] != kind:
        raise ValueError(f"{path} holds a {manifest['kind']} model, expected {kind}")
    model.load(values)
    return model


def load_uman(cfg: ExperimentConfig, run: str, m: int) -> UmanModel:
    return _restore(UmanModel(cfg.uman_config(m)), uman_path(run, m), "uman")


def load_mcumm(cfg: ExperimentConfig, run: str) -> McummModel:
    return _restore(McummModel(cfg.mcumm_config()), mcumm_path(run), "mcumm")


def load_vran(cfg: ExperimentConfig, run: str) -> VranModel:
    return _restore(VranModel(cfg.vran_config()), vran_path(run), "vran")


# -- matching evaluation ---------------------------------------------------------


@dataclass
class MatchingReport:
    umac: dict[tuple[str, int], float]  # (method, M) -> UMAC
    rumm_expected: float
    n_samples: int


def _predict(model, cache: TensorCache, recs, m, batch=32):
    out = []
    for s in range(0, len(recs), batch):
        bdf, beams = cache.uman_batch(recs[s:s + batch], m)
        out.append(model.forward(bdf, beams))
    return np.concatenate(out)


def eval_matching(cfg: ExperimentConfig, run: str) -> MatchingReport:
    test = load_split(data_dir(run), "test")
    recs = test.uman
    if not recs:
        raise ValueError("test split has no UMAN samples")
    cache = TensorCache(cfg, test)
    grid = cfg.heatmap_grid()
    results: dict[tuple[str, int], list[MatchResult]] = {}
    for m in cfg.m_values:
        heat = _predict(load_uman(cfg, run, m), cache, recs, m)
        results[("3DUMM", m)] = [match_from_heatmap(h, cache.boxes(r), grid, r["truth"])
                                 for h, r in zip(heat, recs)]
    logits = _predict(load_mcumm(cfg, run), cache, recs, cfg.mcumm_m)
    results[("MCUMM", cfg.mcumm_m)] = [match_from_logits(z, cache.boxes(r), cfg.nets.o_max, r["truth"])
                                       for z, r in zip(logits, recs)]
    rng = np.random.default_rng([cfg.seed, 31])
    results[("RUMM", 0)] = [match_rumm(cache.boxes(r), rng, r["truth"]) for r in recs]

    expected = rumm_expectation([len(cache.boxes(r)) for r in recs])
    scores = {k: umac(v) for k, v in results.items()}
    rows = [[method, m, len(v), sum(r.correct for r in v), _fmt(scores[(method, m)])]
            for (method, m), v in results.items()]
    rows.append(["RUMM-expected", 0, len(recs), "", _fmt(expected)])
    os.makedirs(metrics_dir(run), exist_ok=True)
    write_csv(os.path.join(metrics_dir(run), "matching_metrics.csv"),
              ["method", "M", "n_samples", "n_correct", "umac"], rows)
    pred_rows = [[r["id"], method, m, res.predicted, r["truth"], int(res.correct)]
                 for (method, m), v in results.items() for r, res in zip(recs, v)]
    write_csv(os.path.join(metrics_dir(run), "matching_predictions.csv"),
              ["sample_id", "method", "M", "predicted", "truth", "correct"], pred_rows)
    return MatchingReport(scores, expected, len(recs))


# -- allocation evaluation -------------------------------------------------------


class _UserMatcher:
    """Finds each user's box at a moment with the heatmap matcher of the configured BS."""

    def __init__(self, cfg: ExperimentConfig, run: str, split: SplitData, cache: TensorCache):
        self.cfg, self.split, self.cache = cfg, split, cache
        self.models = {m: load_uman(cfg, run, m) for m in cfg.m_values}
        self.grid = cfg.usdf_grid()
        self.heat_grid = cfg.heatmap_grid()
        self._memo: dict[tuple[int, int, int], int] = {}
        self.n = self.n_correct = 0

    def history(self, traj: int, step: int, vid: int) -> int:
        k = 0
        while step - k * self.cfg.alpha >= 0:
            m = self.split.moments.get((traj, step - k * self.cfg.alpha))
            if m is None or vid not in m.beams[self.cfg.uman_bs]:
                break
            k += 1
        return k

    def __call__(self, traj: int, step: int, vid: int) -> int:
        key = (traj, step, vid)
        if key in self._memo:
            return self._memo[key]
        moment = self.split.moments[(traj, step)]
        avail = self.history(traj, step, vid)
        usable = [m for m in self.cfg.m_values if m <= avail]
        m = max(usable) if usable else min(self.cfg.m_values)
        a = self.cfg.alpha
        # pad a short history with the oldest available moment
        steps = [max(step - (m - 1 - k) * a, step - (avail - 1) * a) for k in range(m)]
        bdf = np.concatenate([self.cache.bdf(traj, s) for s in steps], axis=-1)[None]
        beams = np.array([[self.split.moments[(traj, s)].beams[self.cfg.uman_bs][vid][0] for s in steps]])
        heat = self.models[m].forward(bdf, beams)[0]
        # only boxes inside the grid can be placed in the allocation input
        inside = [k for k, b in enumerate(moment.fused) if self.grid.cell_of(b.x, b.y) is not None]
        res = match_from_heatmap(heat, [moment.fused[k] for k in inside], self.heat_grid)
        pick = inside[res.predicted]
        self.n += 1
        self.n_correct += pick == moment.truth_box(vid)
        self._memo[key] = pick
        return pick


@dataclass
class AllocationReport:
    atrr: dict[tuple[str, str], float]  # (method, U or "all") -> ATRR
    match_accuracy: float
    n_samples: int
    time_ratio: float


def eval_allocation(cfg: ExperimentConfig, run: str) -> AllocationReport:
    test = load_split(data_dir(run), "test")
    recs = test.vran
    if not recs:
        raise ValueError("test split has no VRAN samples")
    cache = TensorCache(cfg, test)
    matcher = _UserMatcher(cfg, run, test, cache)
    vran = load_vran(cfg, run)
    p_max = test.p_max
    noise = cfg.radio.noise_power
    stations = stations_from_cameras(cfg.scene_config().cameras, cfg.road(), cfg.radio_config().bs_height)
    bs_xy = [(s.x, s.y) for s in stations]
    rng = np.random.default_rng([cfg.seed, 41])
    methods = ("BTRAM", "VBRAM", "NBBRAM", "RRAM")
    rates: dict[str, list[float]] = {k: [] for k in methods}
    timing: dict[str, list[float]] = {"BTRAM": [], "VBRAM": []}
    sample_rows = []
    for r in recs:
        moment = test.moments[(r["traj"], r["step"])]
        combo = r["combo"]
        n_bs = moment.rsrp.shape[0]
        sub = moment.rsrp[np.ix_(range(n_bs), combo, range(n_bs), combo)]
        U = r["U"]

        t0 = time.perf_counter()
        ref = btram(sub, U, noise, p_max)
        timing["BTRAM"].append(time.perf_counter() - t0)
        if ref.b != tuple(r["b"]):
            raise RuntimeError(f"BTRAM label of {r['id']} does not reproduce")

        boxes = [matcher(r["traj"], r["step"], vid) for vid in r["users"]]
        t0 = time.perf_counter()
        usdf = cache.usdf(moment.fused, boxes)
        cells = user_cells(moment.fused, boxes, cache.usdf_grid)
        ob, op = vran.forward(usdf[None])
        vb = vbram_from_outputs(ob[0], op[0], cells, p_max)
        timing["VBRAM"].append(time.perf_counter() - t0)

        xy = [(moment.fused[k].x, moment.fused[k].y) for k in boxes]
        sols = {"BTRAM": (ref.b, ref.P), "VBRAM": vb, "NBBRAM": nbbram(xy, bs_xy, p_max),
                "RRAM": rram(U, p_max, rng)}
        for name in methods:
            b, P = sols[name]
            rate = total_rate(b, P, sub, noise, p_max)  # raises on a C1/C2 violation
            rates[name].append(rate)
            sample_rows.append([r["id"], U, name, ";".join(map(str, b)), ";".join(_fmt(p) for p in P), _fmt(rate)])

    users = [r["U"] for r in recs]
    scores = {}
    metric_rows = []
    for u in sorted(set(users)) + ["all"]:
        sel = [k for k, x in enumerate(users) if u == "all" or x == u]
        ref = [rates["BTRAM"][k] for k in sel]
        for name in methods:
            got = [rates[name][k] for k in sel]
            scores[(name, str(u))] = 1.0 if name == "BTRAM" else atrr(got, ref)
            metric_rows.append([name, u, len(sel), _fmt(sum(got)), _fmt(scores[(name, str(u))])])
    os.makedirs(metrics_dir(run), exist_ok=True)
    write_csv(os.path.join(metrics_dir(run), "allocation_metrics.csv"),
              ["method", "U", "n_samples", "sum_rate", "atrr"], metric_rows)
    write_csv(os.path.join(metrics_dir(run), "allocation_samples.csv"),
              ["sample_id", "U", "method", "b", "P", "rate"], sample_rows)

    # wall time is machine dependent, so it lives apart from the deterministic metrics
    time_rows = []
    for u in sorted(set(users)):
        sel = [k for k, x in enumerate(users) if x == u]
        tb = float(np.mean([timing["BTRAM"][k] for k in sel]))
        tv = float(np.mean([timing["VBRAM"][k] for k in sel]))
        time_rows.append([u, len(sel), f"{tb:.6g}", f"{tv:.6g}", f"{tv / tb:.6g}"])
    write_csv(os.path.join(run, "timing.csv"),
              ["U", "n_samples", "btram_seconds", "vbram_seconds", "vbram_over_btram"], time_rows)
    ratio = float(np.sum(timing["VBRAM"]) / np.sum(timing["BTRAM"]))
    acc = matcher.n_correct / matcher.n if matcher.n else float("nan")
    log.info("user boxes matched correctly for %d of %d users", matcher.n_correct, matcher.n)
    return AllocationReport(scores, acc, len(recs), ratio)
