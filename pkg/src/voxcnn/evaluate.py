"""Stratified splitting, repeated stratified k-fold, and the study metrics.

Classes are CN=0, AD=1, MCI=2.  Sensitivity/specificity collapse the
three-class confusion matrix to AD-vs-rest.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import graph, train as T
from .errors import InputError, NumericError
from .rng import substream

CLASS_NAMES = ("CN", "AD", "MCI")
N_CLASSES = 3
AD = 1


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise InputError(f"labels must be in [0, {N_CLASSES})")
    return labels


def stratified_split(labels, test_frac: float, seed: int):
    """Class-proportional (train, test) index split.

    Per-class test counts follow largest-remainder apportionment against the
    global target round(test_frac * n), so e.g. 70/111/68 at 20% gives a
    50-sample test set with 14/22/14 per class.
    """
    if not 0.0 < test_frac < 1.0:
        raise InputError("test_frac must be in (0, 1)")
    labels = _check_labels(labels)
    n = len(labels)
    target = round(test_frac * n)
    classes, counts = np.unique(labels, return_counts=True)
    ideal = test_frac * counts
    base = np.floor(ideal).astype(int)
    remainder = target - base.sum()
    order = np.argsort(-(ideal - base), kind="stable")
    take = base.copy()
    for i in order[:remainder]:
        take[i] += 1

    rng = substream(seed, "split")
    test_idx = []
    for cls, cnt in zip(classes, take):
        members = np.flatnonzero(labels == cls)
        picked = rng.permutation(len(members))[:cnt]
        test_idx.append(members[picked])
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


@dataclass
class FoldPlan:
    reps: int
    k: int
    # assignment[rep][fold] -> validation index array
    assignment: list[list[np.ndarray]]

    @property
    def n_runs(self) -> int:
        return self.reps * self.k

    def runs(self):
        for rep in range(self.reps):
            for fold in range(self.k):
                yield rep, fold, self.assignment[rep][fold]


def repeated_stratified_kfold(labels, k: int, reps: int, seed: int) -> FoldPlan:
    """Class-proportional k-fold partitions, repeated with fresh shuffles."""
    labels = _check_labels(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if k < 2:
        raise InputError("k must be >= 2")
    if k > counts.min():
        raise InputError(f"k={k} exceeds the smallest class count {counts.min()}")
    assignment = []
    for rep in range(reps):
        rng = substream(seed, "kfold", rep)
        folds = [[] for _ in range(k)]
        for cls in classes:
            members = np.flatnonzero(labels == cls)
            members = members[rng.permutation(len(members))]
            for fold, chunk in enumerate(np.array_split(members, k)):
                folds[fold].append(chunk)
        assignment.append([np.sort(np.concatenate(parts)) for parts in folds])
    return FoldPlan(reps, k, assignment)


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """3x3 counts; rows are the real class, columns the predicted class."""
    y_true = _check_labels(y_true)
    y_pred = _check_labels(y_pred)
    if len(y_true) != len(y_pred):
        raise InputError("label vectors must have equal length")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise InputError("empty confusion matrix")
    return float(np.trace(cm) / total)


def sensitivity_specificity(cm: np.ndarray, positive_class: int = AD):
    """(sensitivity, specificity) after collapsing to positive-vs-rest."""
    cm = np.asarray(cm)
    tp = cm[positive_class, positive_class]
    fn = cm[positive_class].sum() - tp
    fp = cm[:, positive_class].sum() - tp
    tn = cm.sum() - tp - fn - fp
    if tp + fn == 0:
        raise InputError("no samples of the positive class")
    return float(tp / (tp + fn)), float(tn / (tn + fp))


@dataclass
class RunResult:
    rep: int
    fold: int
    confusion: np.ndarray | None
    curve: T.LearningCurve | None
    failed: bool = False
    error: str | None = None


@dataclass
class EvalReport:
    plan: FoldPlan
    runs: list[RunResult]
    mean_accuracy: float
    std_accuracy: float
    mean_curve: list[dict]
    any_failed: bool
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "reps": self.plan.reps,
            "k": self.plan.k,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "any_failed": self.any_failed,
            "runs": [
                {
                    "rep": r.rep,
                    "fold": r.fold,
                    "failed": r.failed,
                    "error": r.error,
                    "confusion": None if r.confusion is None else r.confusion.tolist(),
                }
                for r in self.runs
            ],
            "mean_curve": self.mean_curve,
            "metadata": self.metadata,
        }


def run_rkfold(spec: graph.ModelSpec, volumes, labels, hyper: T.HyperParams,
               plan: FoldPlan, augmentor=None, jobs: int = 1) -> EvalReport:
    """Train a fresh model per (rep, fold) and aggregate metrics.

    Model parameters and optimizer state are never reused across folds.
    Validation indices are asserted disjoint from training indices on every
    run (leakage guard).  ``jobs`` bounds fold-level parallelism; every run
    draws its seed from its own (rep, fold) substream, so results do not
    depend on scheduling.
    """
    labels = _check_labels(labels)
    all_idx = np.arange(len(labels))

    def one_run(rep, fold, val_idx) -> RunResult:
        train_idx = np.setdiff1d(all_idx, val_idx)
        assert not np.intersect1d(train_idx, val_idx).size, "train/validation overlap"
        run_seed = int(substream(hyper.seed, "run", rep, fold).integers(0, 2**31 - 1))
        run_hyper = T.HyperParams(
            lr0=hyper.lr0, decay_rate=hyper.decay_rate, epochs=hyper.epochs,
            batch_size=hyper.batch_size, l2_lambda=hyper.l2_lambda,
            seed=run_seed, shuffle=hyper.shuffle,
        )
        model = graph.build(spec, seed=run_seed)
        try:
            model, curve = T.train(
                model,
                (_take(volumes, train_idx), labels[train_idx]),
                (_take(volumes, val_idx), labels[val_idx]),
                run_hyper,
                augmentor=augmentor,
            )
            probs = model.forward(_take(volumes, val_idx), "inference")
            cm = confusion_matrix(labels[val_idx], probs.argmax(axis=1))
            return RunResult(rep, fold, cm, curve)
        except NumericError as exc:
            return RunResult(rep, fold, None, None, failed=True, error=str(exc))

    work = list(plan.runs())
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda args: one_run(*args), work))
    else:
        results = [one_run(*args) for args in work]

    ok = [r for r in results if not r.failed]
    accs = [accuracy(r.confusion) for r in ok]
    mean_curve = _average_curves([r.curve for r in ok])
    return EvalReport(
        plan=plan,
        runs=results,
        mean_accuracy=float(np.mean(accs)) if accs else float("nan"),
        std_accuracy=float(np.std(accs)) if accs else float("nan"),
        mean_curve=mean_curve,
        any_failed=any(r.failed for r in results),
        metadata={"seed": hyper.seed, "spec": spec.name, "epochs": hyper.epochs},
    )


def _take(x, idx):
    if isinstance(x, tuple):
        return tuple(part[idx] for part in x)
    return x[idx]


def _average_curves(curves) -> list[dict]:
    if not curves:
        return []
    n_epochs = min(len(c.rows) for c in curves)
    out = []
    for e in range(n_epochs):
        rows = [c.rows[e] for c in curves]
        out.append(
            {
                "epoch": e,
                "train_loss": float(np.mean([r.train_loss for r in rows])),
                "train_acc": float(np.mean([r.train_acc for r in rows])),
                "val_loss": float(np.mean([r.val_loss for r in rows])),
                "val_acc": float(np.mean([r.val_acc for r in rows])),
            }
        )
    return out
