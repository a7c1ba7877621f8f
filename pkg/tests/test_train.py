"""Loss, regularization, schedule, Adam, and the training loop contracts."""

import numpy as np
import pytest

from voxcnn import graph, layers as L, records, train as T
from voxcnn.errors import InputError, NumericError
from voxcnn.fixtures import load_fixture
from voxcnn.rng import substream

from conftest import build_f64, fd_gradient_check, random_batch


# ---------------------------------------------------------------------------
# Softmax / cross-entropy


def test_softmax_uniform_on_equal_logits():
    assert np.allclose(L.softmax(np.zeros(3)), 1 / 3)


def test_softmax_golden_triplet():
    got = L.softmax(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(got, [0.09003, 0.24473, 0.66524], atol=1e-5)
    assert abs(got.sum() - 1.0) < 1e-6


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(7)
    assert np.allclose(L.softmax(v), L.softmax(v + 123.456), atol=1e-6)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        L.softmax(np.array([1.0, np.inf, 0.0]))


def test_softmax_survives_extreme_logits():
    out = L.softmax(np.array([1e4, 0.0, -1e4]))
    assert np.all(np.isfinite(out)) and abs(out.sum() - 1.0) < 1e-6


def test_cross_entropy_perfect_prediction_hits_clamp_floor():
    y = np.array([[0.0, 1.0, 0.0]])
    assert T.cross_entropy(y, y) <= 1e-6


def test_cross_entropy_uniform_is_log3():
    y = np.array([[1.0, 0.0, 0.0]])
    p = np.full((1, 3), 1 / 3)
    assert abs(T.cross_entropy(y, p) - np.log(3)) < 1e-4


def test_cross_entropy_batch_is_mean():
    y = T.one_hot(np.array([0, 1, 2]), 3)
    rng = np.random.default_rng(1)
    p = L.softmax(rng.standard_normal((3, 3)))
    singles = [T.cross_entropy(y[i:i + 1], p[i:i + 1]) for i in range(3)]
    assert abs(T.cross_entropy(y, p) - np.mean(singles)) < 1e-12


def test_cross_entropy_clamp_keeps_confident_misses_finite():
    y = np.array([[1.0, 0.0, 0.0]])
    p = np.array([[0.0, 1.0, 0.0]])  # certain and wrong
    loss = T.cross_entropy(y, p)
    assert np.isfinite(loss)
    assert abs(loss - -np.log(1e-7)) < 1e-6


def test_cross_entropy_rejects_non_one_hot():
    with pytest.raises(InputError):
        T.cross_entropy(np.array([[0.5, 0.5, 0.0]]), np.full((1, 3), 1 / 3))


# ---------------------------------------------------------------------------
# L2


def test_l2_hand_value():
    model = graph.build(load_fixture("pet_8_mini"), seed=0, dtype=np.float64)
    w = next(p for p in model.params() if p.role == "dense_weights")
    for p in model.params():
        p.values[...] = 0.0
        p.l2 = 0.0
    w.values.reshape(-1)[:2] = [1.0, 2.0]
    w.l2 = 0.5
    assert abs(T.l2_penalty(model) - 2.5) < 1e-12


def test_l2_zero_lambda_is_free():
    model = graph.build(load_fixture("mri_9_mini"), seed=0, dtype=np.float64)
    for p in model.params():
        p.l2 = 0.0
    assert T.l2_penalty(model) == 0.0


def test_l2_never_touches_biases_or_batchnorm():
    spec, model = build_f64("mri_9_mini")  # no per-layer lambdas to override
    x = random_batch(spec, n=2, seed=0)
    y = T.one_hot(np.array([0, 1]), 3)
    T.loss_and_grads(model, x, y, "train", substream(3, "d"), l2_lambda=0.0)
    base = {p.name: p.grad.copy() for p in model.params()}
    T.loss_and_grads(model, x, y, "train", substream(3, "d"), l2_lambda=0.1)
    for p in model.params():
        if p.role in ("conv_weights", "dense_weights"):
            assert np.allclose(p.grad, base[p.name] + 2 * 0.1 * p.values, atol=1e-12)
        else:
            assert np.array_equal(p.grad, base[p.name]), p.name


def test_per_layer_lambda_wins_over_global_default():
    model = graph.build(load_fixture("pet_8"), seed=0)
    conv_l2 = {p.l2 for p in model.params() if p.role == "conv_weights"}
    assert conv_l2 == {1e-5}  # the fixture flags its conv weights explicitly
    penalty_default = T.l2_penalty(model, lam=0.5)
    # Dense weights pick up the global default; conv weights keep 1e-5.
    conv_sq = sum((p.values.astype(np.float64) ** 2).sum()
                  for p in model.params() if p.role == "conv_weights")
    dense_sq = sum((p.values.astype(np.float64) ** 2).sum()
                   for p in model.params() if p.role == "dense_weights")
    assert abs(penalty_default - (1e-5 * conv_sq + 0.5 * dense_sq)) < 1e-6


# ---------------------------------------------------------------------------
# Learning-rate schedule


def test_exp_decay_endpoints_and_golden():
    assert T.exp_decay_lr(1e-3, 0.5, 0, 40) == 1e-3
    assert abs(T.exp_decay_lr(1e-3, 0.5, 40, 40) - 0.5e-3) < 1e-18
    assert abs(T.exp_decay_lr(1e-5, 0.1, 25, 50) - 3.1623e-6) < 1e-10


def test_exp_decay_rejects_bad_rate():
    with pytest.raises(InputError):
        T.exp_decay_lr(1e-3, 0.0, 1, 10)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradients_leave_params_unchanged():
    p = L.ParamTensor("w", "dense_weights", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    st = T.AdamState([p])
    T.adam_step(st, [p], 0.1)
    assert np.array_equal(p.values, [1.0, -2.0])


def test_adam_one_step_hand_value():
    """w=0, g=1, lr=0.1, t=1: bias-corrected m=v=1, so w -> -0.1/(1 + 1e-7)."""
    p = L.ParamTensor("w", "dense_weights", np.zeros(1))
    p.grad = np.ones(1)
    st = T.AdamState([p])
    T.adam_step(st, [p], 0.1)
    assert abs(p.values[0] - (-0.1 / (1.0 + 1e-7))) < 1e-12
    assert abs(p.values[0] + 0.09999999) < 1e-7


def test_adam_skips_frozen_params():
    p = L.ParamTensor("w", "dense_weights", np.ones(3), trainable=False)
    p.grad = np.ones(3)
    st = T.AdamState([p])
    T.adam_step(st, [p], 0.1)
    assert np.array_equal(p.values, np.ones(3))


def test_adam_rejects_non_finite_gradients():
    p = L.ParamTensor("w", "dense_weights", np.zeros(2))
    p.grad = np.array([1.0, np.nan])
    with pytest.raises(NumericError):
        T.adam_step(T.AdamState([p]), [p], 0.1)


# ---------------------------------------------------------------------------
# Whole-model gradients


@pytest.mark.parametrize("fixture", ["pet_8_mini", "mri_9_mini", "two_branch_mini"])
def test_whole_model_gradient_matches_finite_differences(fixture):
    spec, model = build_f64(fixture)
    x = random_batch(spec, n=1, seed=0)
    y = T.one_hot(np.array([1]), 3)
    checked, worst = fd_gradient_check(model, x, y)
    assert checked == sum(p.values.size for p in model.params())


# ---------------------------------------------------------------------------
# Training loop


def tiny_dataset(n_per_class=4, seed=7):
    recs, _ = records.gen_synthetic(n_per_class, dims=(16, 16, 16), seed=seed)
    vols = np.stack([r.volume("PET") for r in recs])
    labels = np.array([r.label for r in recs])
    return vols, labels


def test_training_descends_on_fixed_batch():
    spec, model = build_f64("pet_8_mini")
    vols, labels = tiny_dataset(2)
    x = vols[:6].astype(np.float64)
    y = T.one_hot(labels[:6], 3)
    params = model.params()
    adam = T.AdamState(params)
    loss0, _ = T.loss_and_grads(model, x, y, "inference")
    losses = [loss0]
    for _ in range(20):
        T.loss_and_grads(model, x, y, "inference")  # no dropout: smooth descent
        T.adam_step(adam, params, 1e-3)
        losses.append(T.loss_and_grads(model, x, y, "inference")[0])
    assert losses[-1] < losses[0]
    assert all(b < a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_train_curve_is_bitwise_reproducible():
    vols, labels = tiny_dataset(3)
    hyper = T.HyperParams(lr0=1e-3, epochs=3, batch_size=4, seed=11)
    curves = []
    for _ in range(2):
        model = graph.build(load_fixture("pet_8_mini"), seed=11)
        _, curve = T.train(model, (vols, labels), (vols[:3], labels[:3]), hyper)
        curves.append([(r.train_loss, r.train_acc, r.val_loss, r.val_acc) for r in curve.rows])
    assert curves[0] == curves[1]


def test_zero_epochs_returns_initialization():
    vols, labels = tiny_dataset(2)
    model = graph.build(load_fixture("pet_8_mini"), seed=5)
    before = [p.values.copy() for p in model.params()]
    _, curve = T.train(model, (vols, labels), hyper=T.HyperParams(epochs=0))
    assert curve.rows == []
    for p, v in zip(model.params(), before):
        assert np.array_equal(p.values, v)


def test_empty_train_set_rejected():
    model = graph.build(load_fixture("pet_8_mini"), seed=5)
    with pytest.raises(InputError):
        T.train(model, (np.zeros((0, 16, 16, 16, 1)), np.zeros(0, dtype=int)))


def test_early_stopping_patience_zero_restores_first_epoch():
    """Validation loss worsens monotonically here: training a model on one
    class while validating on another drives val loss up almost surely."""
    vols, labels = tiny_dataset(4)
    train_mask = labels == 0
    val_mask = labels == 1
    model = graph.build(load_fixture("pet_8_mini"), seed=3)
    hyper = T.HyperParams(lr0=5e-3, epochs=8, batch_size=4, seed=3)
    model, curve = T.train(
        model,
        (vols[train_mask], labels[train_mask]),
        (vols[val_mask], labels[val_mask]),
        hyper,
        early_stopping_patience=0,
    )
    val_losses = [r.val_loss for r in curve.rows]
    stop = int(np.argmin(val_losses))
    assert len(curve.rows) < 8  # stopped early
    assert val_losses[stop + 1] > val_losses[stop]

    # The restored parameters reproduce the best epoch's validation loss.
    vols_val = vols[val_mask]
    y_val = T.one_hot(labels[val_mask], 3)
    probs = model.forward(vols_val, "inference")
    assert abs(T.cross_entropy(y_val, probs) - val_losses[stop]) < 1e-6


def test_augmentor_applied_to_train_not_validation():
    calls = []

    def spy(vol, sample_seed):
        calls.append(sample_seed)
        return vol

    vols, labels = tiny_dataset(2)
    model = graph.build(load_fixture("pet_8_mini"), seed=1)
    T.train(model, (vols, labels), (vols[:2], labels[:2]),
            T.HyperParams(epochs=2, batch_size=3, seed=1), augmentor=spy)
    assert len(calls) == 2 * len(labels)  # every train sample, every epoch
    assert len(set(calls)) == len(calls)  # per-sample per-epoch seeds differ


def test_nan_loss_aborts_with_numeric_error():
    vols, labels = tiny_dataset(2)
    model = graph.build(load_fixture("pet_8_mini"), seed=1)
    for p in model.params():
        if p.role == "dense_weights":
            p.values[...] = 1e30  # guaranteed overflow in float32
    with pytest.raises(NumericError):
        T.train(model, (vols, labels), hyper=T.HyperParams(epochs=1))


def test_hyperparams_validation():
    with pytest.raises(InputError):
        T.HyperParams(lr0=0.0)
    with pytest.raises(InputError):
        T.HyperParams(decay_rate=0.0)
    with pytest.raises(InputError):
        T.HyperParams(batch_size=0)
