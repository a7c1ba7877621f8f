"""Losses, Adam with exponential LR decay, and the minibatch training loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .layers import ParamTensor, softmax
from .rng import sample_seed, substream

PROB_CLAMP = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


@dataclass
class HyperParams:
    lr0: float = 1e-3
    decay_rate: float = 1.0
    epochs: int = 1
    batch_size: int = 8
    l2_lambda: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr0 <= 0:
            raise InputError("lr0 must be positive")
        if not 0.0 < self.decay_rate <= 1.0:
            raise InputError("decay_rate must be in (0, 1]")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class CurveRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None


@dataclass
class LearningCurve:
    rows: list[CurveRow] = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.rows:
                w.writerow([
                    r.epoch,
                    f"{r.train_loss:.8g}",
                    f"{r.train_acc:.8g}",
                    "" if r.val_loss is None else f"{r.val_loss:.8g}",
                    "" if r.val_acc is None else f"{r.val_acc:.8g}",
                ])


def cross_entropy(y_onehot: np.ndarray, probs: np.ndarray) -> float:
    """Mean -sum(y log p) with p clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y_onehot)
    p = np.asarray(probs)
    if y.shape != p.shape:
        raise InputError(f"label shape {y.shape} != probability shape {p.shape}")
    row_sums = y.sum(axis=-1)
    if not (np.all((y == 0) | (y == 1)) and np.all(row_sums == 1)):
        raise InputError("labels must be one-hot")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_sample = -(y * np.log(p)).sum(axis=-1)
    return float(per_sample.mean())


def cross_entropy_grad(y_onehot: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(probs); zero where the clamp is active."""
    p = np.asarray(probs)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.shape[0]
    return np.where(inside, -y_onehot / pc, 0.0) / n


def one_hot(labels: np.ndarray, classes: int = 3) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= classes:
        raise InputError(f"labels must be in [0, {classes})")
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


_L2_ROLES = {"conv_weights", "dense_weights"}


def _effective_l2(p: ParamTensor, lam: float | None) -> float:
    # Per-layer lambda wins; the global value is a default for weight
    # tensors whose layer did not set one.  Biases and BN never get L2.
    if p.role not in _L2_ROLES:
        return 0.0
    if p.l2:
        return p.l2
    return lam or 0.0


def l2_penalty(model, lam: float | None = None):
    """Penalty sum over weight tensors of lambda * sum(w^2).

    Returns the scalar added to the loss; the matching gradient contribution
    2*lambda*w is added by :func:`add_l2_grads`.
    """
    total = 0.0
    for p in model.params():
        eff = _effective_l2(p, lam)
        if eff:
            total += eff * float((p.values.astype(np.float64) ** 2).sum())
    return total


def add_l2_grads(model, lam: float | None = None):
    for p in model.params():
        eff = _effective_l2(p, lam)
        if eff and p.grad is not None:
            p.grad = p.grad + 2.0 * eff * p.values


def exp_decay_lr(lr0: float, rate: float, epoch: int, total_epochs: int) -> float:
    """lr = lr0 * rate ** (epoch / total_epochs), evaluated once per epoch."""
    if rate <= 0:
        raise InputError("decay rate must be positive")
    if total_epochs < 1:
        return lr0
    return lr0 * rate ** (epoch / total_epochs)


class AdamState:
    """Per-parameter first/second moment accumulators plus a step counter."""

    def __init__(self, params: list[ParamTensor], beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {id(p): np.zeros_like(p.values) for p in params}
        self.v = {id(p): np.zeros_like(p.values) for p in params}


def adam_step(state: AdamState, params: list[ParamTensor], lr: float):
    """One bias-corrected Adam update; frozen parameters are untouched."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {p.name}")
        m = state.m[id(p)]
        v = state.v[id(p)]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.values -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.values.dtype)


def loss_and_grads(model, x, y_onehot, mode="train", rng=None, l2_lambda=None):
    """Forward + backward; leaves per-parameter grads on the model.

    Returns (loss, probs).  Loss includes the L2 penalty and grads include
    its contribution.
    """
    probs = model.forward(x, mode, rng)
    loss = cross_entropy(y_onehot, probs) + l2_penalty(model, l2_lambda)
    model.backward(cross_entropy_grad(y_onehot, probs))
    add_l2_grads(model, l2_lambda)
    return loss, probs


def _evaluate(model, x, y_onehot, batch_size=32):
    """Inference-mode loss and accuracy over a dataset."""
    losses, correct, n = [], 0, len(y_onehot)
    for lo in range(0, n, batch_size):
        xb = _slice_batch(x, lo, lo + batch_size)
        yb = y_onehot[lo : lo + batch_size]
        probs = model.forward(xb, "inference")
        losses.append(cross_entropy(yb, probs) * len(yb))
        correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())
    return sum(losses) / n, correct / n


def _slice_batch(x, lo, hi):
    if isinstance(x, tuple):
        return tuple(part[lo:hi] for part in x)
    return x[lo:hi]


def _take(x, idx):
    if isinstance(x, tuple):
        return tuple(part[idx] for part in x)
    return x[idx]


def _bn_layers(model):
    from .layers import BatchNorm

    return [lyr for lyr in model._walk_layers() if isinstance(lyr, BatchNorm)]


def _snapshot(model, params):
    """Copy everything inference depends on: parameters and BN moving stats."""
    return (
        [p.values.copy() for p in params],
        [(bn.moving_mean.copy(), bn.moving_var.copy()) for bn in _bn_layers(model)],
    )


def _restore(model, params, snap):
    values, bn_stats = snap
    for p, v in zip(params, values):
        p.values[...] = v
    for bn, (mm, mv) in zip(_bn_layers(model), bn_stats):
        bn.moving_mean = mm.copy()
        bn.moving_var = mv.copy()


def train(model, train_set, val_set=None, hyper: HyperParams | None = None,
          augmentor=None, early_stopping_patience: int | None = None):
    """Minibatch training with per-epoch exponential LR decay.

    ``train_set``/``val_set`` are ``(volumes, labels)`` pairs; volumes may be
    a tuple of arrays for two-branch models.  ``augmentor``, when given, is
    called as ``augmentor(volume, sample_seed)`` on every training sample
    (never on validation data).  Train accuracy is measured on the augmented
    samples as the model sees them.

    Early stopping monitors validation loss and restores the best-epoch
    parameters; it is off unless a patience is given.
    """
    hyper = hyper or HyperParams()
    x_train, y_train = train_set
    n = len(y_train)
    if n == 0:
        raise InputError("training set is empty")
    classes = model.spec.head[-1].units if model.spec.is_two_branch else model.spec.layers[-1].units
    y_oh = one_hot(y_train, classes)
    val = None
    if val_set is not None and len(val_set[1]) > 0:
        val = (val_set[0], one_hot(val_set[1], classes))

    params = model.params()
    adam = AdamState(params)
    curve = LearningCurve()
    best_loss, best_snap, bad_epochs = np.inf, None, 0

    for epoch in range(hyper.epochs):
        lr = exp_decay_lr(hyper.lr0, hyper.decay_rate, epoch, hyper.epochs)
        if hyper.shuffle:
            order = substream(hyper.seed, "shuffle", epoch).permutation(n)
        else:
            order = np.arange(n)
        drop_rng = substream(hyper.seed, "dropout", epoch)

        epoch_loss, epoch_correct = 0.0, 0
        for bi, lo in enumerate(range(0, n, hyper.batch_size)):
            idx = order[lo : lo + hyper.batch_size]
            xb = _take(x_train, idx)
            yb = y_oh[idx]
            if augmentor is not None:
                xb = _augment_batch(xb, idx, augmentor, hyper.seed, epoch)
            try:
                loss, probs = loss_and_grads(model, xb, yb, "train", drop_rng, hyper.l2_lambda or None)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {bi}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch} batch {bi}: non-finite loss")
            adam_step(adam, params, lr)
            epoch_loss += loss * len(yb)
            epoch_correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())

        row = CurveRow(epoch, epoch_loss / n, epoch_correct / n)
        if val is not None:
            row.val_loss, row.val_acc = _evaluate(model, *val)
        curve.rows.append(row)

        if early_stopping_patience is not None and val is not None:
            if row.val_loss < best_loss:
                best_loss, best_snap, bad_epochs = row.val_loss, _snapshot(model, params), 0
            else:
                bad_epochs += 1
                if bad_epochs > early_stopping_patience:
                    _restore(model, params, best_snap)
                    break

    if early_stopping_patience is not None and best_snap is not None and curve.rows:
        if curve.rows[-1].val_loss is not None and curve.rows[-1].val_loss > best_loss:
            _restore(model, params, best_snap)
    return model, curve


def _augment_batch(xb, idx, augmentor, seed, epoch):
    def apply_one(arr, tag):
        out = np.empty_like(arr)
        for j, i in enumerate(idx):
            out[j] = augmentor(arr[j], sample_seed(seed, "augment", epoch, int(i), tag))
        return out

    if isinstance(xb, tuple):
        return tuple(apply_one(part, t) for t, part in enumerate(xb))
    return apply_one(xb, 0)
