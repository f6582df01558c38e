import math

import numpy as np
import pytest

import oracles
from visioncomm.neural import (AvgPool2, Conv2D, Dense, Embedding, ReLU, TrainConfig, TrainingDiverged,
                               UmanConfig, UmanModel, VranConfig, VranModel, focal_loss, load_checkpoint,
                               save_checkpoint, train, vran_b_loss, vran_p_loss)
from visioncomm.neural.losses import EPS


def test_dense_identity():
    rng = np.random.default_rng(0)
    d = Dense(4, 4, rng, np.float64)
    d.params["w"][...] = np.eye(4)
    x = rng.standard_normal((2, 4))
    assert np.array_equal(d.forward(x), x)
    with pytest.raises(ValueError):
        d.forward(np.zeros((2, 3)))


def test_relu_negative_input():
    r = ReLU()
    assert np.all(r.forward(-np.ones(3)) == 0)
    assert np.all(r.backward(np.ones(3)) == 0)


def test_conv_matches_direct_convolution():
    rng = np.random.default_rng(1)
    conv = Conv2D(2, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 5, 4, 2))
    y = conv.forward(x)
    w, b = conv.params["w"], conv.params["b"]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(y)
    for i in range(5):
        for j in range(4):
            ref[:, i, j] = np.einsum("nklc,klcd->nd", xp[:, i:i + 3, j:j + 3], w) + b
    assert np.allclose(y, ref)
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 4, 4, 3)))
    with pytest.raises(ValueError):
        Conv2D(2, 2, rng, k=2)


def test_pool_and_embedding_errors():
    with pytest.raises(ValueError):
        AvgPool2().forward(np.zeros((1, 3, 4, 1)))
    with pytest.raises(ValueError):
        Embedding(4, 2, np.random.default_rng(0)).forward(np.array([4]))


def test_every_layer_passes_finite_differences():
    errors = oracles.layer_gradient_errors(seed=5)
    assert max(errors.values()) < 1e-4, errors


def test_every_loss_passes_finite_differences():
    errors = oracles.loss_gradient_errors(seed=6)
    assert max(errors.values()) < 1e-4, errors


def test_models_pass_finite_differences():
    errors = oracles.model_gradient_errors(seed=7)
    assert max(errors.values()) < 1e-4, errors


def test_focal_perfect_prediction_and_single_term():
    F = np.zeros((1, 4, 5))
    F[0, 1, 2] = 1.0
    pred = F.copy()
    pred[0, 1, 2] = 1 - EPS
    assert focal_loss(pred, F)[0] < 1e-5 * F.size
    pred = np.zeros_like(F)
    pred[0, 1, 2] = 0.5
    assert focal_loss(pred, F)[0] == pytest.approx(-(0.5 ** 2) * math.log(0.5))
    with pytest.raises(ValueError):
        focal_loss(np.zeros((1, 2)), np.zeros((1, 3)))


def test_focal_non_negative_and_monotone_along_homotopy():
    rng = np.random.default_rng(2)
    F = rng.uniform(0, 0.9, (2, 6, 6))
    F[:, 3, 3] = 1.0
    start = rng.uniform(0.01, 0.99, F.shape)
    target = np.clip(F, EPS, 1 - EPS)
    values = [focal_loss(start + t * (target - start), F)[0] for t in np.linspace(0, 1, 10)]
    assert min(values) >= 0
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_vran_b_loss_examples():
    ob = np.zeros((1, 1, 1, 4))
    ob[0, 0, 0, 1] = 1.0
    mask = np.ones((1, 1, 1), bool)
    pred = np.array([0.1, 0.9, 0.1, 0.1]).reshape(ob.shape)
    expect = (-(0.1 ** 2) * math.log(0.9) + 3 * 0.1 ** 2) / 4
    assert vran_b_loss(pred, ob, mask)[0] == pytest.approx(expect)
    confident = np.where(ob == 1, 1 - EPS, 0.0)
    assert vran_b_loss(confident, ob, mask)[0] == pytest.approx(0.0, abs=1e-12)
    # cells outside the mask contribute nothing
    big = np.zeros((1, 2, 1, 4))
    big[0, 0, 0, 1] = 1.0
    pbig = np.full(big.shape, 0.7)
    pbig[0, 0, 0] = pred[0, 0, 0]
    assert vran_b_loss(pbig, big, np.array([[[True], [False]]]))[0] == pytest.approx(expect)
    with pytest.raises(ValueError):
        vran_b_loss(pred, ob, np.zeros((1, 1, 1), bool))


def test_vran_p_loss_examples():
    mask = np.ones((1, 1, 1), bool)
    op = np.full((1, 1, 1, 1), 0.4)
    assert vran_p_loss(op, op, mask)[0] == 0.0
    assert vran_p_loss(op + 0.1, op, mask)[0] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        vran_p_loss(op, op, np.zeros((1, 1, 1), bool))


def small_uman(m=2, **kw):
    return UmanConfig(m=m, grid=(8, 12), n_pairs=10, bdf_filters=(4, 4, 4), beam_filters=(4, 4, 4),
                      head_filters=(4, 4, 1), embed_dim=4, hidden=6, **kw)


@pytest.mark.parametrize("recurrent", [True, False])
def test_uman_output_shape_and_range(recurrent):
    rng = np.random.default_rng(3)
    model = UmanModel(small_uman(recurrent=recurrent), seed=0)
    out = model.forward(rng.uniform(0, 1, (3, 8, 12, 6)).astype(np.float32), rng.integers(0, 10, (3, 2)))
    assert out.shape == (3, 4, 6) and model.output_shape == (4, 6)
    assert np.all((out > 0) & (out < 1))
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 8, 12, 3), np.float32), np.zeros((1, 2), int))


def test_vran_output_shapes():
    cfg = VranConfig(n_bs=3, grid=(6, 8), trunk_filters=(4, 4, 4), b_filters=(4, 4, 3), p_filters=(4, 4, 1))
    ob, op = VranModel(cfg, seed=0).forward(np.zeros((2, 6, 8, 4), np.float32))
    assert ob.shape == (2, 6, 8, 3) and op.shape == (2, 6, 8, 1)
    assert np.all((ob > 0) & (ob < 1)) and np.all((op > 0) & (op < 1))
    with pytest.raises(ValueError):
        VranConfig(n_bs=3, b_filters=(4, 4))


def toy_problem(n=50, seed=0):
    """Heatmap regression where the keypoint sits under the brightest BDF cell."""
    rng = np.random.default_rng(seed)
    bdf = rng.uniform(0, 0.2, (n, 8, 12, 6)).astype(np.float32)
    heat = np.zeros((n, 4, 6), np.float32)
    for k in range(n):
        i, j = rng.integers(0, 4), rng.integers(0, 6)
        bdf[k, 2 * i, 2 * j, :] = 1.0
        heat[k, i, j] = 1.0
    return {"bdf": bdf, "beams": rng.integers(0, 10, (n, 2)), "heat": heat}


def objective(model, batch, backward):
    pred = model.forward(batch["bdf"], batch["beams"])
    loss, g = focal_loss(pred, batch["heat"])
    if backward:
        model.backward(g)
    return loss


def test_zero_learning_rate_keeps_parameters():
    model = UmanModel(small_uman(), seed=1)
    before = {k: v.copy() for k, v in model.named_params().items()}
    train(model, objective, toy_problem(20), None, TrainConfig(epochs=1, batch_size=8, lr=0.0))
    assert all(np.array_equal(before[k], v) for k, v in model.named_params().items())


def test_training_reduces_validation_loss_and_is_deterministic():
    data, valid = toy_problem(50, 0), toy_problem(20, 1)
    cfg = TrainConfig(epochs=4, batch_size=10, lr=3e-3, seed=4)
    a = UmanModel(small_uman(), seed=2)
    res = train(a, objective, data, valid, cfg)
    assert res.curve[res.best_epoch - 1][2] < res.curve[0][2]
    b = UmanModel(small_uman(), seed=2)
    assert train(b, objective, data, valid, cfg).curve == res.curve
    assert all(np.array_equal(v, b.named_params()[k]) for k, v in a.named_params().items())


def test_divergence_aborts():
    def bad(model, batch, backward):
        return float("nan")
    with pytest.raises(TrainingDiverged):
        train(UmanModel(small_uman(), seed=0), bad, toy_problem(4), None, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    assert (TrainConfig().beta, TrainConfig().eta) == (2.0, 4.0)


def test_checkpoint_round_trip(tmp_path):
    model = UmanModel(small_uman(), seed=5)
    path = str(tmp_path / "m.npz")
    save_checkpoint(path, model, "uman", small_uman().to_dict(), {"note": 1})
    meta, values = load_checkpoint(path)
    assert meta["kind"] == "uman"
    other = UmanModel(small_uman(), seed=6)
    other.load(values)
    x = np.ones((1, 8, 12, 6), np.float32)
    beams = np.zeros((1, 2), int)
    assert np.array_equal(model.forward(x, beams), other.forward(x, beams))
    with pytest.raises(KeyError):
        UmanModel(small_uman(m=3), seed=0).load({})
