"""Layers with hand-written backward passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` during ``backward``. Images
are NHWC: (batch, columns along X, rows along Y, channels).
"""

from __future__ import annotations

import numpy as np


class Module:
    """Parameter container. Subclasses fill ``params`` or register children."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self._children.items():
            out.update(child.named_params(f"{prefix}{name}."))
        return out

    def named_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.grads.items()}
        for name, child in self._children.items():
            out.update(child.named_grads(f"{prefix}{name}."))
        return out

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)
        for child in self._children.values():
            child.zero_grad()

    def astype(self, dtype) -> "Module":
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
            self.grads[k] = np.zeros_like(self.params[k])
        for child in self._children.values():
            child.astype(dtype)
        return self

    def load(self, values: dict[str, np.ndarray]):
        own = self.named_params()
        missing = set(own) - set(values)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, v in own.items():
            if v.shape != values[k].shape:
                raise ValueError(f"{k}: shape {values[k].shape} != {v.shape}")
            v[...] = values[k]

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.named_params().values())

    def _param(self, name: str, value: np.ndarray):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self._param("w", he_normal(rng, (n_in, n_out), n_in, dtype))
        self._param("b", np.zeros(n_out, dtype))

    def forward(self, x):
        w = self.params["w"]
        if x.shape[-1] != w.shape[0]:
            raise ValueError(f"dense expects {w.shape[0]} features, got {x.shape[-1]}")
        self.x = x
        return x @ w + self.params["b"]

    def backward(self, g):
        x2 = self.x.reshape(-1, self.x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.grads["w"] += x2.T @ g2
        self.grads["b"] += g2.sum(0)
        return g @ self.params["w"].T


class Conv2D(Module):
    """3x3 (or any odd k) convolution, stride 1, zero 'same' padding.

    The padded batch is flattened to rows of channels; the tap at (i, j) is
    then the contiguous row range starting at ``i*(W+2p) + j``, so each tap is a
    single matmul on a view. Outputs computed across row and sample seams are
    cropped away.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3,
                 dtype=np.float32):
        super().__init__()
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.k = k
        self._param("w", he_normal(rng, (k, k, c_in, c_out), k * k * c_in, dtype))
        self._param("b", np.zeros(c_out, dtype))

    def _layout(self, shape):
        n, h, w, _ = shape
        p = self.k // 2
        hp, wp = h + 2 * p, w + 2 * p
        span = (self.k - 1) * wp + self.k - 1
        return n, h, w, p, hp, wp, n * hp * wp - span

    def forward(self, x):
        wgt = self.params["w"]
        if x.ndim != 4 or x.shape[-1] != wgt.shape[2]:
            raise ValueError(f"conv expects NHWC with {wgt.shape[2]} channels, got {x.shape}")
        n, h, w, p, hp, wp, rows = self._layout(x.shape)
        xp = np.zeros((n, hp, wp, x.shape[-1]), x.dtype)
        xp[:, p:p + h, p:p + w] = x
        flat = xp.reshape(-1, x.shape[-1])
        self.flat, self.shape = flat, x.shape
        acc = np.zeros((n * hp * wp, wgt.shape[3]), np.result_type(x.dtype, wgt.dtype))
        for i in range(self.k):
            for j in range(self.k):
                off = i * wp + j
                acc[:rows] += flat[off:off + rows] @ wgt[i, j]
        return acc.reshape(n, hp, wp, -1)[:, :h, :w] + self.params["b"]

    def backward(self, g):
        wgt = self.params["w"]
        n, h, w, p, hp, wp, rows = self._layout(self.shape)
        gp = np.zeros((n, hp, wp, g.shape[-1]), g.dtype)
        gp[:, :h, :w] = g
        gflat = gp.reshape(-1, g.shape[-1])[:rows]
        dflat = np.zeros_like(self.flat)
        for i in range(self.k):
            for j in range(self.k):
                off = i * wp + j
                self.grads["w"][i, j] += self.flat[off:off + rows].T @ gflat
                dflat[off:off + rows] += gflat @ wgt[i, j].T
        self.grads["b"] += g.sum((0, 1, 2))
        return dflat.reshape(n, hp, wp, -1)[:, p:p + h, p:p + w]


class AvgPool2(Module):
    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {x.shape}")
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean((2, 4))

    def backward(self, g):
        return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


class Embedding(Module):
    def __init__(self, n_items: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self._param("w", (rng.standard_normal((n_items, dim)) * 0.1).astype(dtype))

    def forward(self, idx):
        idx = np.asarray(idx)
        if idx.min() < 0 or idx.max() >= self.params["w"].shape[0]:
            raise ValueError("embedding index out of range")
        self.idx = idx
        return self.params["w"][idx]

    def backward(self, g):
        np.add.at(self.grads["w"], self.idx, g)
        return None


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class GRU(Module):
    """Gated recurrent unit over (batch, time, features); returns the last hidden state.

    Gates are packed as [update, reset, candidate]; the reset gate scales the
    recurrent part of the candidate.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        h = n_hidden
        self.h = h
        self._param("wx", (rng.standard_normal((n_in, 3 * h)) / np.sqrt(n_in)).astype(dtype))
        self._param("wh", (rng.standard_normal((h, 3 * h)) / np.sqrt(h)).astype(dtype))
        self._param("b", np.zeros(3 * h, dtype))

    def forward(self, x):
        n, t, _ = x.shape
        H = self.h
        wx, wh, b = self.params["wx"], self.params["wh"], self.params["b"]
        h = np.zeros((n, H), np.result_type(x.dtype, wx.dtype))
        self.cache = []
        for s in range(t):
            ax = x[:, s] @ wx + b
            ah = h @ wh
            z = _sigmoid(ax[:, :H] + ah[:, :H])
            r = _sigmoid(ax[:, H:2 * H] + ah[:, H:2 * H])
            c = np.tanh(ax[:, 2 * H:] + r * ah[:, 2 * H:])
            self.cache.append((x[:, s], h, z, r, c, ah[:, 2 * H:]))
            h = (1.0 - z) * c + z * h
        return h

    def backward(self, g):
        wx, wh = self.params["wx"], self.params["wh"]
        dx = np.zeros((g.shape[0], len(self.cache), wx.shape[0]), g.dtype)
        dh = g
        for s in range(len(self.cache) - 1, -1, -1):
            xs, hp, z, r, c, ahn = self.cache[s]
            dc = dh * (1.0 - z)
            dz = dh * (hp - c)
            dh_prev = dh * z
            dan = dc * (1.0 - c * c)
            dr = dan * ahn
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            dax = np.concatenate([daz, dar, dan], axis=1)
            dah = np.concatenate([daz, dar, dan * r], axis=1)
            self.grads["wx"] += xs.T @ dax
            self.grads["wh"] += hp.T @ dah
            self.grads["b"] += dax.sum(0)
            dx[:, s] = dax @ wx.T
            dh = dh_prev + dah @ wh.T
        return dx


class ReLU(Module):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, g):
        return g * self.mask


class Sigmoid(Module):
    def forward(self, x):
        self.y = _sigmoid(x)
        return self.y

    def backward(self, g):
        return g * self.y * (1.0 - self.y)


class Identity(Module):
    def forward(self, x):
        return x

    def backward(self, g):
        return g


class GlobalContext(Module):
    """Adds a grid-wide summary to every cell: x + relu(dense(mean over cells of x)).

    Lets a shallow fully-convolutional stack react to objects far outside its
    receptive field.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.dense = self.add("dense", Dense(channels, channels, rng, dtype))
        self.relu = ReLU()

    def forward(self, x):
        self.cells = x.shape[1] * x.shape[2]
        h = self.relu.forward(self.dense.forward(x.mean((1, 2))))
        return x + h[:, None, None, :]

    def backward(self, g):
        gm = self.dense.backward(self.relu.backward(g.sum((1, 2))))
        return g + gm[:, None, None, :] / self.cells


def shortcut(x: np.ndarray, channels: int) -> np.ndarray:
    """Identity shortcut matched to ``channels``: extra channels zero, surplus dropped."""
    c = x.shape[-1]
    if c == channels:
        return x
    if c > channels:
        return x[..., :channels]
    pad = np.zeros(x.shape[:-1] + (channels - c,), x.dtype)
    return np.concatenate([x, pad], axis=-1)


def shortcut_backward(g: np.ndarray, channels: int) -> np.ndarray:
    c = g.shape[-1]
    if c == channels:
        return g
    if c > channels:
        return g[..., :channels]
    pad = np.zeros(g.shape[:-1] + (channels - c,), g.dtype)
    return np.concatenate([g, pad], axis=-1)


class ConvStack(Module):
    """Chain of conv layers with residual connections.

    ``residual`` holds (src, dst) pairs: the input of layer ``src`` is added to
    the activated output of layer ``dst``. Widths that differ are bridged by
    zero-padding or dropping channels, so no projection weights are needed.
    ``last`` selects the final activation: "relu", "sigmoid" or "none".
    """

    def __init__(self, c_in: int, filters, rng: np.random.Generator,
                 residual=(), last: str = "relu", dtype=np.float32):
        super().__init__()
        self.filters = tuple(filters)
        self.residual = tuple(residual)
        for src, dst in self.residual:
            if not 0 <= src <= dst < len(self.filters):
                raise ValueError(f"bad residual pair {(src, dst)}")
        self.convs, self.acts = [], []
        c = c_in
        for i, f in enumerate(self.filters):
            self.convs.append(self.add(f"conv{i}", Conv2D(c, f, rng, dtype=dtype)))
            kind = last if i == len(self.filters) - 1 else "relu"
            self.acts.append({"relu": ReLU, "sigmoid": Sigmoid, "none": Identity}[kind]())
            c = f
        self.c_in = c_in

    def forward(self, x):
        srcs = {s for s, _ in self.residual}
        saved = {}
        self.inputs = []
        h = x
        for i, (conv, act) in enumerate(zip(self.convs, self.acts)):
            self.inputs.append(h.shape[-1])
            if i in srcs:
                saved[i] = h
            y = act.forward(conv.forward(h))
            for src, dst in self.residual:
                if dst == i:
                    y = y + shortcut(saved[src], y.shape[-1])
            h = y
        return h

    def backward(self, g):
        pending: dict[int, np.ndarray] = {}
        for i in range(len(self.convs) - 1, -1, -1):
            for src, dst in self.residual:
                if dst == i:
                    extra = shortcut_backward(g, self.inputs[src])
                    pending[src] = pending.get(src, 0) + extra
            g = self.convs[i].backward(self.acts[i].backward(g))
            if i in pending:
                g = g + pending.pop(i)
        return g
