"""Feature-fusion networks for user matching and resource allocation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import GRU, AvgPool2, ConvStack, Dense, Embedding, GlobalContext, Module, ReLU


def coord_channels(n: int, nx: int, ny: int, dtype) -> np.ndarray:
    """Two constant channels holding the normalized cell column and row."""
    cx = (np.arange(nx) + 0.5) / nx
    cy = (np.arange(ny) + 0.5) / ny
    grid = np.stack(np.broadcast_arrays(cx[:, None], cy[None, :]), axis=-1).astype(dtype)
    return np.broadcast_to(grid, (n, nx, ny, 2))


def _with_coords(x, enabled: bool):
    if not enabled:
        return x
    return np.concatenate([x, coord_channels(x.shape[0], x.shape[1], x.shape[2], x.dtype)], axis=-1)


@dataclass(frozen=True)
class UmanConfig:
    m: int = 1
    grid: tuple[int, int] = (40, 160)
    n_pairs: int = 128
    bdf_filters: tuple[int, ...] = (8, 8, 8)
    beam_filters: tuple[int, ...] = (8, 8, 8)
    head_filters: tuple[int, ...] = (8, 8, 1)
    embed_dim: int = 16
    hidden: int = 32
    recurrent: bool = True  # False: concatenate per-step embeddings instead of a GRU
    coords: bool = True
    output_bias: float = -4.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("sequence length must be >= 1")
        if self.bdf_filters[-1] != self.beam_filters[-1]:
            raise ValueError("both branches must end with the same width to be summed")
        if self.head_filters[-1] != 1:
            raise ValueError("heatmap head must end with one filter")
        if self.grid[0] % 2 or self.grid[1] % 2:
            raise ValueError("grid dims must be even for 2x2 pooling")

    def to_dict(self):
        return asdict(self)


class _Trunk(Module):
    """BDF branch + beam branch, summed and pooled to the heatmap resolution."""

    def __init__(self, cfg: UmanConfig, rng: np.random.Generator, dtype):
        super().__init__()
        self.cfg = cfg
        c_in = 3 * cfg.m + (2 if cfg.coords else 0)
        self.bdf = self.add("bdf", ConvStack(c_in, cfg.bdf_filters, rng, _res_pair(cfg.bdf_filters), dtype=dtype))
        self.embed = self.add("embed", Embedding(cfg.n_pairs, cfg.embed_dim, rng, dtype))
        if cfg.recurrent:
            self.rnn = self.add("rnn", GRU(cfg.embed_dim, cfg.hidden, rng, dtype))
            seq_out = cfg.hidden
        else:
            self.rnn = None
            seq_out = cfg.m * cfg.embed_dim
        nx, ny = cfg.grid
        self.spread = self.add("spread", Dense(seq_out, nx * ny, rng, dtype))
        self.beam = self.add("beam", ConvStack(1, cfg.beam_filters, rng, _res_pair(cfg.beam_filters), dtype=dtype))
        self.pool = AvgPool2()

    def forward(self, bdf, beams):
        cfg = self.cfg
        n = bdf.shape[0]
        if bdf.shape[1:] != (cfg.grid[0], cfg.grid[1], 3 * cfg.m):
            raise ValueError(f"BDF stack shape {bdf.shape[1:]} does not match config")
        if beams.shape != (n, cfg.m):
            raise ValueError(f"beam sequence shape {beams.shape} != {(n, cfg.m)}")
        d = self.bdf.forward(_with_coords(bdf, cfg.coords))
        e = self.embed.forward(beams)
        v = self.rnn.forward(e) if self.rnn is not None else e.reshape(n, -1)
        s = self.spread.forward(v).reshape(n, cfg.grid[0], cfg.grid[1], 1)
        i = self.beam.forward(s)
        return self.pool.forward(d + i)

    def backward(self, g):
        cfg = self.cfg
        g = self.pool.backward(g)
        self.bdf.backward(g)
        gs = self.beam.backward(g).reshape(g.shape[0], -1)
        gv = self.spread.backward(gs)
        if self.rnn is not None:
            ge = self.rnn.backward(gv)
        else:
            ge = gv.reshape(g.shape[0], cfg.m, cfg.embed_dim)
        self.embed.backward(ge)


def _res_pair(filters):
    # input of the 2nd layer added to the output of the 3rd
    return ((1, 2),) if len(filters) >= 3 else ()


class UmanModel(Module):
    """Maps (BDF stack, beam-pair sequence) to a keypoint heatmap in (0, 1)."""

    def __init__(self, cfg: UmanConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.trunk = self.add("trunk", _Trunk(cfg, rng, dtype))
        # input of the 1st head layer added to the output of the 2nd
        res = ((0, 1),) if len(cfg.head_filters) >= 3 else ()
        self.head = self.add("head", ConvStack(cfg.bdf_filters[-1], cfg.head_filters, rng, res,
                                               last="sigmoid", dtype=dtype))
        self.head.convs[-1].params["b"][:] = cfg.output_bias

    @property
    def output_shape(self):
        return (self.cfg.grid[0] // 2, self.cfg.grid[1] // 2)

    def forward(self, bdf, beams):
        return self.head.forward(self.trunk.forward(bdf, beams))[..., 0]

    def backward(self, g):
        self.trunk.backward(self.head.backward(g[..., None]))


@dataclass(frozen=True)
class McummConfig:
    uman: UmanConfig = field(default_factory=UmanConfig)
    hidden: tuple[int, ...] = (128, 48)
    n_classes: int = 12

    def to_dict(self):
        return {"uman": self.uman.to_dict(), "hidden": self.hidden, "n_classes": self.n_classes}


class McummModel(Module):
    """Same trunk as UMAN; dense layers classify the index of the user's box."""

    def __init__(self, cfg: McummConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.trunk = self.add("trunk", _Trunk(cfg.uman, rng, dtype))
        nx, ny = cfg.uman.grid
        width = (nx // 2) * (ny // 2) * cfg.uman.bdf_filters[-1]
        self.dense, self.relus = [], []
        for k, h in enumerate(cfg.hidden + (cfg.n_classes,)):
            self.dense.append(self.add(f"fc{k}", Dense(width, h, rng, dtype)))
            width = h
        self.relus = [ReLU() for _ in cfg.hidden]

    def forward(self, bdf, beams):
        t = self.trunk.forward(bdf, beams)
        self.trunk_shape = t.shape
        h = t.reshape(t.shape[0], -1)
        for k, layer in enumerate(self.dense):
            h = layer.forward(h)
            if k < len(self.relus):
                h = self.relus[k].forward(h)
        return h

    def backward(self, g):
        for k in range(len(self.dense) - 1, -1, -1):
            if k < len(self.relus):
                g = self.relus[k].backward(g)
            g = self.dense[k].backward(g)
        self.trunk.backward(g.reshape(self.trunk_shape))


@dataclass(frozen=True)
class VranConfig:
    n_bs: int = 4
    grid: tuple[int, int] = (20, 80)
    trunk_filters: tuple[int, ...] = (16, 16, 16, 16, 16)
    b_filters: tuple[int, ...] = (16, 16, 4)
    p_filters: tuple[int, ...] = (16, 16, 1)
    coords: bool = True
    global_context: bool = True
    b_bias: float = -1.0

    def __post_init__(self):
        if self.b_filters[-1] != self.n_bs:
            raise ValueError("BS head must end with one filter per BS")
        if self.p_filters[-1] != 1:
            raise ValueError("power head must end with one filter")

    def to_dict(self):
        return asdict(self)


def _pairs_after_first(filters):
    # inputs of layers 2, 4, ... added to outputs of layers 3, 5, ...
    return tuple((i, i + 1) for i in range(1, len(filters) - 1, 2))


def _pairs_from_first(filters):
    # inputs of layers 1, 3, ... added to outputs of layers 2, 4, ...; the last layer stands alone
    return tuple((i, i + 1) for i in range(0, len(filters) - 2, 2))


class VranModel(Module):
    """Maps a user/scatterer grid to per-cell BS scores and normalized powers."""

    def __init__(self, cfg: VranConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c_in = 4 + (2 if cfg.coords else 0)
        self.trunk = self.add("trunk", ConvStack(c_in, cfg.trunk_filters, rng,
                                                 _pairs_after_first(cfg.trunk_filters), dtype=dtype))
        w = cfg.trunk_filters[-1]
        self.context = self.add("context", GlobalContext(w, rng, dtype)) if cfg.global_context else None
        self.head_b = self.add("head_b", ConvStack(w, cfg.b_filters, rng, _pairs_from_first(cfg.b_filters),
                                                   last="sigmoid", dtype=dtype))
        self.head_p = self.add("head_p", ConvStack(w, cfg.p_filters, rng, _pairs_from_first(cfg.p_filters),
                                                   last="sigmoid", dtype=dtype))
        self.head_b.convs[-1].params["b"][:] = cfg.b_bias

    def forward(self, usdf):
        if usdf.shape[1:] != (self.cfg.grid[0], self.cfg.grid[1], 4):
            raise ValueError(f"USDF shape {usdf.shape[1:]} does not match config")
        z = self.trunk.forward(_with_coords(usdf, self.cfg.coords))
        if self.context is not None:
            z = self.context.forward(z)
        return self.head_b.forward(z), self.head_p.forward(z)

    def backward(self, g_b, g_p):
        g = self.head_b.backward(g_b) + self.head_p.backward(g_p)
        if self.context is not None:
            g = self.context.backward(g)
        self.trunk.backward(g)
