import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from visioncomm.allocation import (atrr, btram, check_constraints, decode_ob, full_power_rate, link_gains,
                                   nbbram, rram, total_rate, vbram_from_outputs, wmmse_power)
from visioncomm.features import GridSpec, encode_labels


def test_total_rate_single_user_and_zero_power():
    rsrp = np.full((2, 1, 2, 1), 3.0)
    assert total_rate([1], [2.0], rsrp, 0.5, [1.0, 2.0]) == pytest.approx(math.log2(1 + 2 * 3 / 0.5))
    rsrp = oracles.random_rsrp(np.random.default_rng(0), 3, 2)
    assert total_rate([0, 2], [0.0, 0.0], rsrp, 1.0, [1, 1, 1]) == 0.0


def test_total_rate_symmetric_instance():
    rsrp = np.zeros((2, 2, 2, 2))
    rsrp[0, 0, 0, 0] = rsrp[1, 1, 1, 1] = 4.0
    rsrp[0, 0, 1, 1] = rsrp[1, 1, 0, 0] = 0.5
    G = link_gains(rsrp, [0, 1])
    per_user = [math.log2(1 + 4 / (0.5 + 1.0))] * 2
    assert total_rate([0, 1], [1.0, 1.0], rsrp, 1.0, [1.0, 1.0]) == pytest.approx(sum(per_user))
    assert G[0, 1] == G[1, 0] == 0.5


def test_constraints():
    check_constraints([0, 2], [1.0, 0.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        check_constraints([1, 1], [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        check_constraints([0], [1.5], [1.0])
    with pytest.raises(ValueError):
        check_constraints([0], [-0.1], [1.0])
    with pytest.raises(ValueError):
        check_constraints([3], [0.1], [1.0, 1.0])


def test_wmmse_single_user_and_decoupled_users():
    assert wmmse_power(np.array([[2.0]]), 1.0, [3.0]).P == pytest.approx((3.0,))
    G = np.diag([1.0, 0.2, 5.0])
    assert wmmse_power(G, 0.1, [1.0, 2.0, 0.5]).P == pytest.approx((1.0, 2.0, 0.5), rel=1e-4)


def test_wmmse_never_below_full_power_and_runs_monotone():
    rng = np.random.default_rng(1)
    for _ in range(30):
        U = int(rng.integers(2, 5))
        G = oracles.random_gains(rng, U)
        p = rng.uniform(0.5, 2, U)
        res = wmmse_power(G, 0.1, p)
        assert oracles.sum_rate(G, res.P, 0.1) >= oracles.sum_rate(G, p, 0.1) - 1e-9
        for hist in res.runs:
            assert all(b >= a - 1e-12 * max(1.0, a) for a, b in zip(hist, hist[1:]))
        assert all(0 <= x <= c * (1 + 1e-9) for x, c in zip(res.P, p))


def test_wmmse_grid_oracle():
    ok, detail = oracles.check_wmmse(n_instances=20, seed=31)
    assert ok, detail


def test_btram_single_user_is_best_bs():
    rsrp = np.array([1.0, 5.0, 2.0]).reshape(3, 1, 1, 1) * np.ones((3, 1, 3, 1))
    p_max = [1.0, 0.3, 1.0]
    sol = btram(rsrp, 1, 1.0, p_max)
    best = max(range(3), key=lambda b: math.log2(1 + p_max[b] * rsrp[b, 0, b, 0]))
    assert sol.b == (best,) == (2,)


def test_btram_matches_enumeration_and_beats_full_power():
    ok, detail = oracles.check_btram(n_instances=20, seed=32)
    assert ok, detail
    rng = np.random.default_rng(5)
    for _ in range(20):
        rsrp = oracles.random_rsrp(rng, 4, 3)
        p = rng.uniform(0.5, 2, 4)
        sol = btram(rsrp, 3, 0.05, p)
        check_constraints(sol.b, sol.P, p)
        assert sol.rate >= full_power_rate(rsrp, sol.b, 0.05, p) - 1e-9


def test_btram_matches_joint_power_search_when_full_power_is_optimal():
    rng = np.random.default_rng(6)
    levels = np.linspace(0, 1, 11)
    checked = 0
    for _ in range(200):
        rsrp = oracles.random_rsrp(rng, 3, 2, spread_db=30)
        p = rng.uniform(0.5, 2, 3)
        best, arg, full = -1.0, None, False
        for b in itertools.permutations(range(3), 2):
            G = link_gains(rsrp, b)
            for a1, a2 in itertools.product(levels, levels):
                r = oracles.sum_rate(G, [a1 * p[b[0]], a2 * p[b[1]]], 0.05)
                if r > best + 1e-12:
                    best, arg, full = r, b, a1 == a2 == 1.0
        if full:
            checked += 1
            assert btram(rsrp, 2, 0.05, p).b == arg
    assert checked >= 20


def test_btram_rejects_bad_shapes():
    with pytest.raises(ValueError):
        btram(np.ones((2, 3, 2, 3)), 3, 1.0, [1, 1])
    with pytest.raises(ValueError):
        btram(np.ones((3, 2, 3, 1)), 2, 1.0, [1, 1, 1])


def test_decode_examples():
    ob = np.zeros((2, 2, 3))
    ob[1, 0, 2] = 0.9
    assert decode_ob(ob, [(1, 0)]) == (2,)
    # both users prefer BS 1; the larger score keeps it, the other takes its next best
    ob = np.zeros((2, 2, 2))
    ob[0, 0] = [0.3, 0.8]
    ob[1, 1] = [0.4, 0.9]
    assert decode_ob(ob, [(0, 0), (1, 1)]) == (0, 1)


def test_decode_shared_cell_goes_to_smaller_user_index():
    ob = np.zeros((1, 1, 3))
    ob[0, 0] = [0.2, 0.9, 0.5]
    assert decode_ob(ob, [(0, 0), (0, 0)]) == (1, 2)


def test_decode_suite():
    ok, detail = oracles.check_decode_ob(n_tensors=200, seed=33)
    assert ok, detail


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_decode_distinct(U, seed):
    rng = np.random.default_rng(seed)
    ob = rng.random((3, 3, 4))
    cells = [(int(rng.integers(3)), int(rng.integers(3))) for _ in range(U)]
    b = decode_ob(ob, cells)
    assert len(set(b)) == U == len(b)


def test_label_round_trip_through_decode():
    grid = GridSpec(0, 0, 1, 1, 5, 6)
    p_max = [2.0, 1.0, 4.0, 1.0]
    b, P = (2, 0, 3), (4.0, 1.0, 0.25)
    cells = [(0, 1), (3, 3), (4, 5)]
    ob, op = encode_labels(b, P, p_max, cells, grid, 4)
    b2, P2 = vbram_from_outputs(ob.values, op.values, cells, p_max)
    assert b2 == b and P2 == pytest.approx(P)


def test_shared_cell_users_get_the_same_normalized_power():
    ob = np.zeros((2, 2, 3))
    ob[0, 0] = [0.9, 0.1, 0.7]
    op = np.full((2, 2, 1), 0.6)
    p_max = [2.0, 1.0, 4.0]
    b, P = vbram_from_outputs(ob, op, [(0, 0), (0, 0)], p_max)
    assert P[0] / p_max[b[0]] == pytest.approx(P[1] / p_max[b[1]]) == pytest.approx(0.6)
    check_constraints(b, P, p_max)


def test_nbbram_rules():
    bs = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]
    p = [1.0, 2.0, 3.0]
    assert nbbram([(9.0, 1.0)], bs, p) == ((1,), (2.0,))
    # both nearest to BS 0; the closer one keeps it
    b, _ = nbbram([(2.0, 1.0), (1.0, 0.5)], bs, p)
    assert b[1] == 0 and b[0] != 0
    with pytest.raises(ValueError):
        nbbram([(0, 0)] * 4, bs, p)


def test_rram_seeded():
    p = [1.0, 2.0, 3.0, 4.0]
    a = rram(3, p, np.random.default_rng(4))
    assert a == rram(3, p, np.random.default_rng(4))
    check_constraints(*a, p)


def test_atrr():
    ref = [1.0, 2.0, 3.0]
    assert atrr(ref, ref) == 1.0
    assert atrr([0, 0, 0], ref) == 0.0
    with pytest.raises(ValueError):
        atrr([1.0], ref)
    with pytest.raises(ZeroDivisionError):
        atrr([0.0], [0.0])
