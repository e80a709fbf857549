"""Evaluation metrics for the vendor classifier.

These are written out rather than borrowed because the contracts differ
from library defaults in small ways that matter here: balanced accuracy
silently excludes classes without true samples, micro F1 books "unknown"
predictions as a false negative for the true class and a false positive
for nobody, and the one-vs-rest AUC mean skips classes that lack either
positives or negatives in the fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNKNOWN_LABEL = "unknown"


def balanced_accuracy(y_true, y_pred) -> float:
    """Unweighted mean of per-class recalls (inverse-prevalence weighting)."""
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred lengths differ")
    if not y_true:
        raise ValueError("empty input")
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for t, p in zip(y_true, y_pred):
        totals[t] = totals.get(t, 0) + 1
        if t == p:
            hits[t] = hits.get(t, 0) + 1
    recalls = [hits.get(c, 0) / n for c, n in totals.items()]
    return float(np.mean(recalls))


def micro_f1(y_true, y_pred, unknown_label: str = UNKNOWN_LABEL) -> float:
    """Class-pooled F1; equals plain accuracy when nothing is 'unknown'."""
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred lengths differ")
    tp = fp = fn = 0
    for t, p in zip(y_true, y_pred):
        if p == unknown_label:
            fn += 1
        elif p == t:
            tp += 1
        else:
            fp += 1
            fn += 1
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (Mann-Whitney convention)."""
    n = len(scores)
    sorter = np.argsort(scores, kind="mergesort")
    ordered = scores[sorter]
    boundaries = np.flatnonzero(np.diff(ordered) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    avg = (starts + ends + 1) / 2.0  # mean of 1-based positions in each run
    ranks = np.empty(n, dtype=np.float64)
    ranks[sorter] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc_ovr(y_true, probas: np.ndarray, classes) -> float:
    """Macro mean of per-class one-vs-rest AUCs via the rank-sum formula.

    Classes lacking positives or negatives are skipped.
    """
    y_true = np.asarray(list(y_true))
    probas = np.asarray(probas, dtype=np.float64)
    if probas.shape[0] != len(y_true):
        raise ValueError("probas rows must match y_true length")
    aucs = []
    for i, cls in enumerate(classes):
        pos = y_true == cls
        n_pos = int(pos.sum())
        n_neg = len(y_true) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = _midranks(probas[:, i])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(u / (n_pos * n_neg))
    if not aucs:
        raise ValueError("no class had both positives and negatives")
    return float(np.mean(aucs))


def confusion_matrix(y_true, y_pred, classes) -> list[list[int]]:
    index = {c: i for i, c in enumerate(classes)}
    size = len(classes)
    matrix = [[0] * (size + 1) for _ in range(size)]  # extra column: unknown/other
    for t, p in zip(y_true, y_pred):
        row = index[t]
        matrix[row][index.get(p, size)] += 1
    return matrix


@dataclass
class MetricsReport:
    balanced_accuracy: float
    roc_auc_ovr: float
    micro_f1: float
    per_fold: dict[str, list[float]] = field(default_factory=dict)
    classes: tuple[str, ...] = ()
    confusion: list[list[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "roc_auc_ovr": self.roc_auc_ovr,
            "micro_f1": self.micro_f1,
            "per_fold": self.per_fold,
            "classes": list(self.classes),
            "confusion": self.confusion,
        }
