"""Mini-batch training with Adam, best-validation selection and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .layers import Module

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    beta: float = 2.0
    eta: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params, self.lr = params, lr

    def step(self, grads: dict[str, np.ndarray]):
        for k, p in self.params.items():
            p -= (self.lr * grads[k]).astype(p.dtype)


# objective(model, batch, backward) -> mean loss over the batch
Objective = Callable[[Module, dict, bool], float]


def batches(data: dict[str, np.ndarray], size: int, order=None):
    n = len(next(iter(data.values())))
    idx = np.arange(n) if order is None else order
    for start in range(0, n, size):
        sel = idx[start:start + size]
        yield {k: v[sel] for k, v in data.items()}


def dataset_size(data: dict[str, np.ndarray]) -> int:
    sizes = {len(v) for v in data.values()}
    if len(sizes) != 1:
        raise ValueError(f"dataset arrays disagree on length: {sizes}")
    return sizes.pop()


def evaluate(model: Module, objective: Objective, data: dict, batch_size: int) -> float:
    total, n = 0.0, 0
    for batch in batches(data, batch_size):
        k = len(next(iter(batch.values())))
        total += objective(model, batch, False) * k
        n += k
    return total / n


@dataclass
class TrainResult:
    curve: list[tuple[int, float, float]]  # (epoch, train loss, validation loss)
    best_epoch: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss"])
        for e, tr, va in self.curve:
            w.writerow([e, f"{tr:.8g}", f"{va:.8g}"])
        return buf.getvalue()


def train(model: Module, objective: Objective, train_data: dict, valid_data: dict | None,
          cfg: TrainConfig) -> TrainResult:
    """Train in place and restore the parameters of the best validation epoch."""
    n = dataset_size(train_data)
    if n == 0:
        raise ValueError("training set is empty")
    has_valid = valid_data is not None and dataset_size(valid_data) > 0
    params = model.named_params()
    opt = Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best, best_epoch, best_params = math.inf, 0, None
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for batch in batches(train_data, cfg.batch_size, rng.permutation(n)):
            model.zero_grad()
            loss = objective(model, batch, True)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            opt.step(model.named_grads())
            total += loss * len(next(iter(batch.values())))
        train_loss = total / n
        valid_loss = evaluate(model, objective, valid_data, cfg.batch_size) if has_valid else train_loss
        if not math.isfinite(valid_loss):
            raise TrainingDiverged(f"validation loss became {valid_loss} in epoch {epoch}")
        curve.append((epoch, train_loss, valid_loss))
        log.info("epoch %d train %.5f valid %.5f", epoch, train_loss, valid_loss)
        if valid_loss < best:
            best, best_epoch = valid_loss, epoch
            best_params = {k: v.copy() for k, v in params.items()}
    if best_params is not None:
        model.load(best_params)
    return TrainResult(curve, best_epoch)


def atomic_write_bytes(path: str, data: bytes):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, model: Module, kind: str, config: dict, extra: dict | None = None):
    """npz archive of all parameters plus a JSON manifest with shapes and config."""
    params = model.named_params()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "extra": extra or {},
    }
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **params)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z["__manifest__"]))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
        values = {k: z[k] for k in z.files if k != "__manifest__"}
    for k, shape in manifest["shapes"].items():
        if list(values[k].shape) != shape:
            raise ValueError(f"checkpoint entry {k} has shape {values[k].shape}, manifest says {shape}")
    return manifest, values


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
