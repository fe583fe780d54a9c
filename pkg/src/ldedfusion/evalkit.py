"""Stratified splitting, confusion matrices, accuracy and multi-run statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from .sim import CLASSES


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class seeded shuffle, then take each class's share of the training quota.

    Per-class quotas use the largest-remainder method so that they add up to
    round(train_fraction * N) exactly. Returns sorted (train, test) index arrays.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    small = classes[counts < 2]
    if small.size:
        raise ValueError(f"classes {small.tolist()} have fewer than 2 samples")
    ideal = train_fraction * counts
    quota = np.floor(ideal).astype(int)
    remaining = int(round(train_fraction * len(y))) - int(quota.sum())
    # largest fractional parts first; ties by class order
    order = sorted(range(len(classes)), key=lambda i: (-(ideal[i] - quota[i]), i))
    for i in order[:max(remaining, 0)]:
        quota[i] += 1
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c, q in zip(classes, quota):
        idx = rng.permutation(np.flatnonzero(y == c))
        train.append(idx[:q])
        test.append(idx[q:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: Tuple[str, ...] = CLASSES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> Dict[str, int]:
        cm = self.counts
        tp = int(cm[c, c])
        fn = int(cm[c].sum() - tp)
        fp = int(cm[:, c].sum() - tp)
        tn = self.total - tp - fn - fp
        return {"TP": tp, "TN": tn, "FP": fp, "FN": fn}

    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), rows, out=np.zeros(len(rows)), where=rows > 0)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "counts": self.counts.tolist(),
            "accuracy": accuracy(self),
            "recall": dict(zip(self.class_names, self.recall().tolist())),
            "one_vs_rest_accuracy": {
                name: binary_accuracy(**self.one_vs_rest(i)) for i, name in enumerate(self.class_names)
            },
        }


def confusion(preds, truths, n_classes: int = len(CLASSES)) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = CLASSES if n_classes == len(CLASSES) else tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts, names)


def binary_accuracy(TP: int, TN: int, FP: int, FN: int) -> float:
    """(TP + TN) / (TP + FP + TN + FN)."""
    total = TP + TN + FP + FN
    if total == 0:
        raise ValueError("empty confusion counts")
    return (TP + TN) / total


def accuracy(cm: ConfusionMatrix) -> float:
    """Multiclass accuracy, trace / total. Equals the binary formula for any 2x2 matrix."""
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


@dataclass
class RunStats:
    accuracies: List[float]
    seeds: List[int] = field(default_factory=list)
    confusions: List[ConfusionMatrix] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def to_dict(self) -> dict:
        out = {"runs": [{"seed": s, "accuracy": a} for s, a in zip(self.seeds, self.accuracies)],
               "mean": self.mean, "std": self.std}
        if self.confusions:
            pooled = ConfusionMatrix(sum(c.counts for c in self.confusions), self.confusions[0].class_names)
            out["confusion"] = pooled.to_dict()
            out["per_run_confusion"] = [c.counts.tolist() for c in self.confusions]
        return out


class RunFailed(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause


Experiment = Callable[[int], Union[float, Tuple[float, ConfusionMatrix], ConfusionMatrix]]


def _run_one(experiment, seed):
    try:
        return experiment(seed)
    except Exception as exc:  # reported with the seed that failed
        raise RunFailed(seed, exc) from exc


def multi_run(experiment: Experiment, n_runs: int = 5, seed: int = 0, jobs: int = 1) -> RunStats:
    """Run ``experiment(seed + i)`` for i < n_runs; results are aggregated in seed order.

    An experiment may return an accuracy, a confusion matrix, or both.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    seeds = [seed + i for i in range(n_runs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [experiment] * n_runs, seeds))
    else:
        results = [_run_one(experiment, s) for s in seeds]
    stats = RunStats([], seeds)
    for r in results:
        if isinstance(r, ConfusionMatrix):
            stats.accuracies.append(accuracy(r))
            stats.confusions.append(r)
        elif isinstance(r, tuple):
            stats.accuracies.append(float(r[0]))
            stats.confusions.append(r[1])
        else:
            stats.accuracies.append(float(r))
    return stats
