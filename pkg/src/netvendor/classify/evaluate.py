"""Class balancing, stratified CV, randomized search, and thresholding."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import asdict, dataclass

import numpy as np

from ..features import FeatureSchema
from .encoding import fit_ohe, transform_many
from .forest import Hyperparams, RandomForestModel, predict, predict_proba, train_forest
from .metrics import (
    MetricsReport,
    balanced_accuracy,
    confusion_matrix,
    micro_f1,
    roc_auc_ovr,
)


@dataclass
class Dataset:
    targets: list[str]
    vectors: list[dict[str, str]]
    labels: list[str]

    def __post_init__(self):
        if not (len(self.targets) == len(self.vectors) == len(self.labels)):
            raise ValueError("targets, vectors, labels must align")

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        return Dataset(
            [self.targets[i] for i in idx],
            [self.vectors[i] for i in idx],
            [self.labels[i] for i in idx],
        )

    def class_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for label in self.labels:
            hist[label] = hist.get(label, 0) + 1
        return hist


def balance_classes(dataset: Dataset, cap: int, rng: random.Random) -> Dataset:
    """Uniformly downsample classes above `cap` without replacement."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(dataset.labels):
        by_class.setdefault(label, []).append(i)
    keep: list[int] = []
    for label in sorted(by_class):
        indices = by_class[label]
        if len(indices) > cap:
            keep.extend(rng.sample(indices, cap))
        else:
            keep.extend(indices)
    return dataset.subset(sorted(keep))


def stratified_kfold(labels: list[str], k: int, rng: random.Random):
    """k disjoint folds preserving per-class proportions within one sample."""
    if k < 2:
        raise ValueError("k must be at least 2")
    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_class.setdefault(label, []).append(i)
    for label, indices in by_class.items():
        if len(indices) < k:
            raise ValueError(f"class {label!r} has {len(indices)} samples, fewer than k={k}")
    test_folds: list[list[int]] = [[] for _ in range(k)]
    for label in sorted(by_class):
        indices = by_class[label][:]
        rng.shuffle(indices)
        for f in range(k):
            test_folds[f].extend(indices[f::k])
    splits = []
    all_indices = set(range(len(labels)))
    for fold in test_folds:
        test = sorted(fold)
        train = sorted(all_indices.difference(fold))
        splits.append((np.asarray(train), np.asarray(test)))
    return splits


@dataclass(frozen=True)
class SearchSpace:
    n_trees_range: tuple[int, int] = (50, 500)
    depth_choices: tuple = (None,) + tuple(range(8, 33))
    max_features_kinds: tuple[str, ...] = ("sqrt", "log2", "fraction")
    fraction_range: tuple[float, float] = (0.1, 1.0)
    min_split_range: tuple[int, int] = (2, 10)
    min_leaf_range: tuple[int, int] = (1, 5)
    bootstrap_choices: tuple[bool, ...] = (True, False)
    criterion_choices: tuple[str, ...] = ("gini", "entropy")

    def draw(self, rng: random.Random) -> Hyperparams:
        kind = rng.choice(self.max_features_kinds)
        if kind == "fraction":
            max_features = round(rng.uniform(*self.fraction_range), 2)
        else:
            max_features = kind
        return Hyperparams(
            n_trees=rng.randint(*self.n_trees_range),
            max_depth=rng.choice(self.depth_choices),
            max_features=max_features,
            min_samples_split=rng.randint(*self.min_split_range),
            min_samples_leaf=rng.randint(*self.min_leaf_range),
            bootstrap=rng.choice(self.bootstrap_choices),
            criterion=rng.choice(self.criterion_choices),
            rng_seed=rng.randrange(2**31),
        )


def _fit_fold(dataset: Dataset, train_idx, params: Hyperparams):
    train = dataset.subset(train_idx)
    vocabulary = fit_ohe(train.vectors)
    X_train = transform_many(vocabulary, train.vectors)
    model = train_forest(X_train, train.labels, params, vocabulary)
    return model, vocabulary


def random_search(
    dataset: Dataset,
    space: SearchSpace,
    n_configs: int = 50,
    inner_k: int = 3,
    rng: random.Random | None = None,
) -> tuple[Hyperparams, list[dict]]:
    """Draw n_configs parameter sets, score each by mean stratified-CV test
    accuracy on shared folds, return (best, leaderboard).

    Ties go to the earlier draw.
    """
    rng = rng or random.Random(0)
    splits = stratified_kfold(dataset.labels, inner_k, rng)
    leaderboard: list[dict] = []
    best: tuple[float, int] | None = None
    best_params: Hyperparams | None = None
    for draw_no in range(n_configs):
        params = space.draw(rng)
        fold_scores = []
        for train_idx, test_idx in splits:
            model, vocabulary = _fit_fold(dataset, train_idx, params)
            test = dataset.subset(test_idx)
            preds = predict(model, transform_many(vocabulary, test.vectors), threshold=None)
            fold_scores.append(float(np.mean([p == t for p, t in zip(preds, test.labels)])))
        score = float(np.mean(fold_scores))
        leaderboard.append(
            {"draw": draw_no, "score": score, "fold_scores": fold_scores, "params": asdict(params)}
        )
        if best is None or score > best[0]:
            best = (score, draw_no)
            best_params = params
    leaderboard.sort(key=lambda row: (-row["score"], row["draw"]))
    for rank, row in enumerate(leaderboard, start=1):
        row["rank"] = rank
    return best_params, leaderboard


def save_leaderboard(leaderboard: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "draw", "score", "fold_scores", "params"])
        for row in leaderboard:
            writer.writerow(
                [
                    row["rank"],
                    row["draw"],
                    f"{row['score']:.6f}",
                    json.dumps(row["fold_scores"]),
                    json.dumps(row["params"], sort_keys=True),
                ]
            )


def evaluate_final(
    dataset: Dataset,
    params: Hyperparams,
    outer_k: int = 5,
    rng: random.Random | None = None,
) -> MetricsReport:
    """Outer stratified CV; mean balanced accuracy, OvR ROC AUC, micro F1."""
    rng = rng or random.Random(0)
    classes = tuple(sorted(set(dataset.labels)))
    per_fold: dict[str, list[float]] = {"balanced_accuracy": [], "roc_auc_ovr": [], "micro_f1": []}
    y_true_all: list[str] = []
    y_pred_all: list[str] = []
    for train_idx, test_idx in stratified_kfold(dataset.labels, outer_k, rng):
        model, vocabulary = _fit_fold(dataset, train_idx, params)
        test = dataset.subset(test_idx)
        X_test = transform_many(vocabulary, test.vectors)
        proba = predict_proba(model, X_test)
        preds = predict(model, X_test, threshold=None)
        per_fold["balanced_accuracy"].append(balanced_accuracy(test.labels, preds))
        per_fold["micro_f1"].append(micro_f1(test.labels, preds))
        per_fold["roc_auc_ovr"].append(roc_auc_ovr(test.labels, proba, model.classes))
        y_true_all.extend(test.labels)
        y_pred_all.extend(preds)
    return MetricsReport(
        balanced_accuracy=float(np.mean(per_fold["balanced_accuracy"])),
        roc_auc_ovr=float(np.mean(per_fold["roc_auc_ovr"])),
        micro_f1=float(np.mean(per_fold["micro_f1"])),
        per_fold=per_fold,
        classes=classes,
        confusion=confusion_matrix(y_true_all, y_pred_all, classes),
    )


def select_unknown_threshold(model: RandomForestModel, X_val: np.ndarray, y_val: list[str]) -> float:
    """Sweep the distinct max-probability values; best micro F1 wins, ties to
    the lower threshold."""
    if len(y_val) == 0:
        raise ValueError("empty validation set")
    proba = predict_proba(model, X_val)
    maxp = proba.max(axis=1)
    picks = [model.classes[i] for i in np.argmax(proba, axis=1)]
    best_t, best_f1 = 0.0, -1.0
    for t in [0.0] + sorted(set(float(v) for v in maxp)):
        preds = ["unknown" if p < t else c for p, c in zip(maxp, picks)]
        f1 = micro_f1(y_val, preds)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t


def feature_importance_report(
    model: RandomForestModel, schema: FeatureSchema
) -> list[tuple[str, float]]:
    """Binary-column importances summed to slots, then to feature families,
    ranked descending.  Length equals the schema's family count."""
    ranges = model.vocabulary.slot_column_ranges()
    slot_family = {slot.name: slot.family for slot in schema.slots}
    totals = {family: 0.0 for family in schema.families}
    for slot_name, (lo, hi) in ranges.items():
        family = slot_family.get(slot_name)
        if family is None:
            continue
        totals[family] += float(model.importances[lo:hi].sum())
    return sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
