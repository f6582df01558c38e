"""Serving-BS selection and power control for U users and B base stations.

Gains come from an RSRP table ``rsrp[b, u, b2, u2]``: the power received by
user u2 (receive beam aimed at BS b2) from BS b while b beams towards user u.
User u served by b_u therefore sees the signal ``rsrp[b_u, u, b_u, u]`` and
interference ``rsrp[b_v, v, b_u, u]`` from the BS serving each other user v.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AllocationSolution:
    b: tuple[int, ...]
    P: tuple[float, ...]
    rate: float
    method: str = ""


@dataclass(frozen=True)
class WmmseResult:
    P: tuple[float, ...]
    history: list[float] = field(default_factory=list)  # sum rate per iteration of the chosen run
    runs: list[list[float]] = field(default_factory=list)  # histories of every start
    start: tuple[bool, ...] = ()  # which users were switched on in the chosen start


def check_constraints(b: Sequence[int], P: Sequence[float], p_max: Sequence[float], n_bs: int | None = None,
                      rtol: float = 1e-9):
    """Raise if a BS serves two users or a power leaves [0, P_max of its BS]."""
    n_bs = len(p_max) if n_bs is None else n_bs
    if len(b) != len(P):
        raise ValueError("b and P must have one entry per user")
    if len(set(b)) != len(b):
        raise ValueError(f"a BS serves more than one user: {tuple(b)}")
    for u, (bu, pu) in enumerate(zip(b, P)):
        if not 0 <= bu < n_bs:
            raise ValueError(f"user {u} assigned to unknown BS {bu}")
        if pu < 0 or pu > p_max[bu] * (1 + rtol):
            raise ValueError(f"user {u} power {pu} outside [0, {p_max[bu]}]")


def link_gains(rsrp: np.ndarray, b: Sequence[int]) -> np.ndarray:
    """G[v, u]: gain from the BS serving user v to the receiver of user u."""
    b = np.asarray(b)
    users = np.arange(len(b))
    return rsrp[b[:, None], users[:, None], b[None, :], users[None, :]]


def rates_from_gains(G: np.ndarray, P, noise: float) -> np.ndarray:
    P = np.asarray(P, float)
    signal = np.diag(G) * P
    interference = P @ G - signal
    return np.log2(1.0 + signal / (interference + noise))


def total_rate(b: Sequence[int], P: Sequence[float], rsrp: np.ndarray, noise: float,
               p_max: Sequence[float]) -> float:
    """Sum over users of log2(1 + SINR) in bit/s/Hz."""
    check_constraints(b, P, p_max, rsrp.shape[0])
    if len(b) == 0:
        return 0.0
    return float(rates_from_gains(link_gains(rsrp, b), P, noise).sum())


def _wmmse_run(G, noise, cap, v, tol, max_iter) -> tuple[np.ndarray, list[float]]:
    direct = np.sqrt(np.diag(G))
    live = direct > 0
    history = [float(rates_from_gains(G, v * v, noise).sum())]
    for _ in range(max_iter):
        recv = v * v @ G + noise  # total received power at each receiver
        r = v * direct / recv
        w = 1.0 / (1.0 - r * v * direct)
        denom = G @ (w * r * r)
        with np.errstate(divide="ignore", invalid="ignore"):
            v_new = np.where(live & (denom > 0), w * r * direct / denom, 0.0)
        v = np.clip(v_new, 0.0, cap)
        rate = float(rates_from_gains(G, v * v, noise).sum())
        if rate < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise ArithmeticError(f"WMMSE sum rate decreased: {history[-1]} -> {rate}")
        history.append(rate)
        if abs(history[-1] - history[-2]) < tol:
            break
    return v, history


def wmmse_power(G: np.ndarray, noise: float, p_cap: Sequence[float], tol: float = 1e-6,
                max_iter: int = 200, multi_start: bool = True) -> WmmseResult:
    """Scalar WMMSE power control for fixed links.

    ``G[v, u]`` is the gain from transmitter v to receiver u and ``p_cap[u]`` the
    power limit of transmitter u. The first run starts at full power. With
    ``multi_start`` further runs start from every proper on/off subset of
    users at full power (a switched-off user stays off), and the best run
    wins; ties keep the earlier start. Within a run the sum rate never
    decreases; a decrease beyond rounding raises.
    """
    G = np.asarray(G, float)
    cap = np.sqrt(np.asarray(p_cap, float))
    U = len(cap)
    starts = [(True,) * U]
    if multi_start and U > 1:
        for k in range(U - 1, 0, -1):
            for on in itertools.combinations(range(U), k):
                starts.append(tuple(u in on for u in range(U)))
    best = None
    runs = []
    for mask in starts:
        v, hist = _wmmse_run(G, noise, cap, np.where(mask, cap, 0.0), tol, max_iter)
        runs.append(hist)
        if best is None or hist[-1] > best[1][-1]:
            best = (v, hist, mask)
    v, hist, mask = best
    return WmmseResult(tuple(float(x) for x in v * v), hist, runs, mask)


def full_power_rate(rsrp: np.ndarray, b: Sequence[int], noise: float, p_max: Sequence[float]) -> float:
    P = [p_max[x] for x in b]
    return float(rates_from_gains(link_gains(rsrp, b), P, noise).sum())


def btram(rsrp: np.ndarray, n_users: int, noise: float, p_max: Sequence[float], tol: float = 1e-6,
          max_iter: int = 200) -> AllocationSolution:
    """Exhaustive search over ordered BS assignments at full power, then WMMSE.

    Ties keep the first permutation in lexicographic order.
    """
    n_bs = rsrp.shape[0]
    if n_users > n_bs:
        raise ValueError(f"{n_users} users cannot be served by {n_bs} BSs")
    if rsrp.shape != (n_bs, n_users, n_bs, n_users):
        raise ValueError(f"RSRP table shape {rsrp.shape} does not match U={n_users}, B={n_bs}")
    best, best_b = -math.inf, None
    for perm in itertools.permutations(range(n_bs), n_users):
        score = full_power_rate(rsrp, perm, noise, p_max)
        if score > best:
            best, best_b = score, perm
    G = link_gains(rsrp, best_b)
    res = wmmse_power(G, noise, [p_max[x] for x in best_b], tol, max_iter)
    P = tuple(min(p, p_max[x]) for p, x in zip(res.P, best_b))
    return AllocationSolution(tuple(best_b), P, float(rates_from_gains(G, P, noise).sum()), "BTRAM")


def decode_ob(ob: np.ndarray, user_cells: Sequence[tuple[int, int]], n_users: int | None = None) -> tuple[int, ...]:
    """Greedy decode of per-cell BS scores into distinct BS indices per user.

    Repeatedly takes the largest remaining score. If its cell still holds an
    unassigned user, the user with the smallest index gets that BS and the BS
    leaves every cell; otherwise only that entry is dropped. Entries outside
    user cells are always dropped, so only user cells are scanned.
    """
    ob = np.asarray(ob, float)
    U = len(user_cells) if n_users is None else n_users
    if U != len(user_cells):
        raise ValueError("need one cell per user")
    n_bs = ob.shape[-1]
    if U > n_bs:
        raise ValueError(f"{U} users but only {n_bs} BS channels to decode")
    waiting: dict[tuple[int, int], list[int]] = {}
    for u, c in enumerate(user_cells):
        waiting.setdefault(tuple(c), []).append(u)
    cells = sorted(waiting)  # row-major order keeps ties on the smallest index
    scores = np.array([ob[ix, iy] for ix, iy in cells])  # (n_cells, B)
    free_bs = np.ones(n_bs, bool)
    open_cell = np.ones(len(cells), bool)
    b = [-1] * U
    for _ in range(U):
        masked = np.where(open_cell[:, None] & free_bs[None, :], scores, -np.inf)
        k, bs = np.unravel_index(int(np.argmax(masked)), masked.shape)
        if not np.isfinite(masked[k, bs]):
            raise ValueError("ran out of candidate entries before every user was served")
        q = waiting[cells[k]]
        b[q.pop(0)] = int(bs)
        if not q:
            open_cell[k] = False
        free_bs[bs] = False
    return tuple(b)


def vbram_from_outputs(ob: np.ndarray, op: np.ndarray, user_cells: Sequence[tuple[int, int]],
                       p_max: Sequence[float]) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Decode network outputs into (b, P); users sharing a cell share the normalized power."""
    b = decode_ob(ob, user_cells)
    op = np.asarray(op)
    if op.ndim == 3:
        op = op[..., 0]
    P = tuple(float(np.clip(op[ix, iy], 0.0, 1.0)) * p_max[bu] for (ix, iy), bu in zip(user_cells, b))
    return b, P


def vbram(model, usdf: np.ndarray, user_cells: Sequence[tuple[int, int]],
          p_max: Sequence[float]) -> tuple[tuple[int, ...], tuple[float, ...]]:
    ob, op = model.forward(np.asarray(usdf, np.float32)[None])
    return vbram_from_outputs(ob[0], op[0], user_cells, p_max)


def nbbram(user_xy: Sequence[tuple[float, float]], bs_xy: Sequence[tuple[float, float]],
           p_max: Sequence[float]) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Nearest BS per user; on a conflict the closer user wins and the other falls back."""
    U, B = len(user_xy), len(bs_xy)
    if U > B:
        raise ValueError(f"{U} users cannot be served by {B} BSs")
    pairs = sorted((math.dist(user_xy[u], bs_xy[b]), u, b) for u in range(U) for b in range(B))
    b = [-1] * U
    taken = set()
    for _, u, bs in pairs:
        if b[u] < 0 and bs not in taken:
            b[u] = bs
            taken.add(bs)
    return tuple(b), tuple(p_max[x] for x in b)


def rram(n_users: int, p_max: Sequence[float], rng: np.random.Generator
         ) -> tuple[tuple[int, ...], tuple[float, ...]]:
    B = len(p_max)
    if n_users > B:
        raise ValueError(f"{n_users} users cannot be served by {B} BSs")
    b = tuple(int(x) for x in rng.permutation(B)[:n_users])
    return b, tuple(p_max[x] for x in b)


def atrr(method_rates: Sequence[float], reference_rates: Sequence[float]) -> float:
    """Ratio of summed rates (not the mean of per-sample ratios)."""
    if len(method_rates) != len(reference_rates):
        raise ValueError("rate lists must be aligned")
    denom = float(np.sum(reference_rates))
    if denom <= 0:
        raise ZeroDivisionError("reference rates sum to zero")
    return float(np.sum(method_rates)) / denom
