"""Stratified folds and fold-aggregated classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from camo.errors import ClassTooSmall, EmptyConfusion

METRICS = ("accuracy", "precision", "recall", "f1")
Z_95 = 1.96


def stratified_kfold(y, k: int = 10, seed: int = 0):
    """``k`` (train_idx, test_idx) pairs; each class is dealt round-robin.

    Classes are visited in sorted order and the dealing position carries on
    from one class to the next, so fold sizes stay balanced too.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            raise ClassTooSmall(f"class {c} has {len(members)} rows, need at least {k}")
        members = rng.permutation(members)
        fold_of[members] = (offset + np.arange(len(members))) % k
        offset += len(members)
    everything = np.arange(len(y))
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def confusion_matrix(y_true, y_pred, classes) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    classes = np.asarray(classes)
    index = {c: i for i, c in enumerate(classes.tolist())}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true).tolist(), np.asarray(y_pred).tolist()):
        cm[index[t], index[p]] += 1
    return cm


def fold_scores(cm) -> dict[str, Fraction]:
    """Exact accuracy and macro precision/recall/F1 of one confusion matrix."""
    cm = [[int(v) for v in row] for row in np.asarray(cm)]
    n = len(cm)
    total = sum(map(sum, cm))
    if total == 0:
        raise EmptyConfusion("confusion matrix has no entries")
    precision = recall = f1 = Fraction(0)
    for c in range(n):
        tp = cm[c][c]
        predicted = sum(cm[r][c] for r in range(n))
        actual = sum(cm[c])
        p = Fraction(tp, predicted) if predicted else Fraction(0)
        r = Fraction(tp, actual) if actual else Fraction(0)
        precision += p
        recall += r
        f1 += 2 * p * r / (p + r) if p + r else Fraction(0)
    return {
        "accuracy": Fraction(sum(cm[i][i] for i in range(n)), total),
        "precision": precision / n,
        "recall": recall / n,
        "f1": f1 / n,
    }


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sd: float
    ci_low: float
    ci_high: float


@dataclass
class MetricsReport:
    summaries: dict
    confusion: np.ndarray
    folds: int

    def __getitem__(self, name) -> MetricSummary:
        return self.summaries[name]

    @property
    def accuracy(self) -> float:
        return self.summaries["accuracy"].mean


def summarize(values) -> MetricSummary:
    """Mean, sample SD and normal-approximation 95% CI, clamped to [0, 1]."""
    values = [Fraction(v) for v in values]
    k = len(values)
    mean = sum(values) / k
    var = sum((v - mean) ** 2 for v in values) / (k - 1) if k > 1 else Fraction(0)
    sd = math.sqrt(var)
    half = Z_95 * sd / math.sqrt(k)
    m = float(mean)
    return MetricSummary(m, sd, min(1.0, max(0.0, m - half)), min(1.0, max(0.0, m + half)))


def compute_metrics(confusions) -> MetricsReport:
    confusions = [np.asarray(c) for c in confusions]
    if not confusions:
        raise EmptyConfusion("no folds to summarize")
    per_fold = [fold_scores(cm) for cm in confusions]
    summaries = {name: summarize([f[name] for f in per_fold]) for name in METRICS}
    return MetricsReport(summaries, sum(confusions), len(confusions))
