import random
from collections import Counter

import numpy as np
import pytest

from netvendor.classify import (
    Dataset,
    Hyperparams,
    SearchSpace,
    balance_classes,
    evaluate_final,
    fit_ohe,
    micro_f1,
    random_search,
    save_leaderboard,
    select_unknown_threshold,
    stratified_kfold,
    train_forest,
    transform_many,
)

TINY_SPACE = SearchSpace(n_trees_range=(5, 15), depth_choices=(None, 4, 8))


def separable_dataset(n_per_class=30, n_classes=3):
    targets, vectors, labels = [], [], []
    for c in range(n_classes):
        for i in range(n_per_class):
            targets.append(f"10.0.{c}.{i}")
            vectors.append({"sig": f"class{c}", "noise": str(i % 4)})
            labels.append(f"vendor{c}")
    return Dataset(targets, vectors, labels)


class TestBalanceClasses:
    def test_gt_shaped_histogram_capped(self):
        sizes = {"cisco": 500, "mikrotik": 300, "huawei": 120}
        targets, vectors, labels = [], [], []
        for vendor, n in sizes.items():
            for i in range(n):
                targets.append(f"{vendor}-{i}")
                vectors.append({"x": "1"})
                labels.append(vendor)
        ds = Dataset(targets, vectors, labels)
        out = balance_classes(ds, cap=150, rng=random.Random(1))
        hist = out.class_histogram()
        assert hist == {"cisco": 150, "mikrotik": 150, "huawei": 120}

    def test_identity_when_under_cap(self):
        ds = separable_dataset(10)
        out = balance_classes(ds, cap=100, rng=random.Random(1))
        assert out.targets == ds.targets

    def test_deterministic(self):
        ds = separable_dataset(40)
        a = balance_classes(ds, cap=25, rng=random.Random(6))
        b = balance_classes(ds, cap=25, rng=random.Random(6))
        assert a.targets == b.targets


class TestStratifiedKFold:
    def test_balanced_two_class_five_fold(self):
        labels = ["a"] * 50 + ["b"] * 50
        splits = stratified_kfold(labels, 5, random.Random(2))
        for _train, test in splits:
            counts = Counter(labels[i] for i in test)
            assert counts == {"a": 10, "b": 10}

    def test_disjoint_and_complete(self):
        ds = separable_dataset(17)
        splits = stratified_kfold(ds.labels, 4, random.Random(3))
        seen = []
        for train, test in splits:
            assert set(train).isdisjoint(test)
            seen.extend(test.tolist())
        assert sorted(seen) == list(range(len(ds)))

    def test_proportions_within_one(self):
        labels = ["a"] * 31 + ["b"] * 17 + ["c"] * 9
        splits = stratified_kfold(labels, 4, random.Random(5))
        for _train, test in splits:
            counts = Counter(labels[i] for i in test)
            for cls, total in (("a", 31), ("b", 17), ("c", 9)):
                assert abs(counts.get(cls, 0) - total / 4) <= 1

    def test_seed_deterministic(self):
        labels = ["a"] * 20 + ["b"] * 20
        s1 = stratified_kfold(labels, 5, random.Random(7))
        s2 = stratified_kfold(labels, 5, random.Random(7))
        assert all((a[1] == b[1]).all() for a, b in zip(s1, s2))

    def test_class_smaller_than_k_rejected(self):
        with pytest.raises(ValueError):
            stratified_kfold(["a", "a", "b"], 2, random.Random(1))


class TestRandomSearch:
    def test_leaderboard_has_fifty_rows(self):
        ds = separable_dataset(12, n_classes=2)
        best, leaderboard = random_search(ds, TINY_SPACE, n_configs=50, inner_k=3,
                                          rng=random.Random(4))
        assert len(leaderboard) == 50
        assert [row["rank"] for row in leaderboard] == list(range(1, 51))

    def test_best_matches_leaderboard_max(self):
        ds = separable_dataset(12, n_classes=2)
        best, leaderboard = random_search(ds, TINY_SPACE, n_configs=8, inner_k=3,
                                          rng=random.Random(4))
        top = leaderboard[0]
        assert top["score"] == max(r["score"] for r in leaderboard)
        assert Hyperparams(**top["params"]) == best

    def test_tie_goes_to_earlier_draw(self):
        ds = separable_dataset(12, n_classes=2)  # everything scores 1.0
        best, leaderboard = random_search(ds, TINY_SPACE, n_configs=5, inner_k=3,
                                          rng=random.Random(4))
        assert leaderboard[0]["draw"] == 0
        assert Hyperparams(**leaderboard[0]["params"]) == best

    def test_identical_seed_identical_leaderboard(self):
        ds = separable_dataset(10, n_classes=2)
        _, l1 = random_search(ds, TINY_SPACE, n_configs=6, inner_k=2, rng=random.Random(8))
        _, l2 = random_search(ds, TINY_SPACE, n_configs=6, inner_k=2, rng=random.Random(8))
        assert l1 == l2

    def test_leaderboard_csv(self, tmp_path):
        ds = separable_dataset(10, n_classes=2)
        _, leaderboard = random_search(ds, TINY_SPACE, n_configs=3, inner_k=2,
                                       rng=random.Random(8))
        path = tmp_path / "leaderboard.csv"
        save_leaderboard(leaderboard, str(path))
        lines = path.read_text().splitlines()
        assert lines[0].startswith("rank,draw,score")
        assert len(lines) == 4


class TestEvaluateFinal:
    def test_five_per_fold_entries_and_bounded_means(self):
        ds = separable_dataset(20)
        report = evaluate_final(ds, Hyperparams(n_trees=15, rng_seed=1), outer_k=5,
                                rng=random.Random(2))
        for metric in ("balanced_accuracy", "roc_auc_ovr", "micro_f1"):
            folds = report.per_fold[metric]
            assert len(folds) == 5
            assert min(folds) <= getattr(report, metric) <= max(folds)

    def test_separable_dataset_scores_one(self):
        ds = separable_dataset(20)
        report = evaluate_final(ds, Hyperparams(n_trees=15, rng_seed=1), outer_k=5,
                                rng=random.Random(2))
        assert report.balanced_accuracy == 1.0
        assert report.roc_auc_ovr == 1.0
        assert report.micro_f1 == 1.0

    def test_confusion_diagonal_on_separable(self):
        ds = separable_dataset(8)
        report = evaluate_final(ds, Hyperparams(n_trees=10, rng_seed=1), outer_k=4,
                                rng=random.Random(2))
        for i, row in enumerate(report.confusion):
            assert row[i] == sum(row)


class TestThreshold:
    def _model(self):
        ds = separable_dataset(20, n_classes=2)
        vocab = fit_ohe(ds.vectors)
        X = transform_many(vocab, ds.vectors)
        model = train_forest(X, ds.labels, Hyperparams(n_trees=20, rng_seed=3), vocab)
        return model, X, ds.labels

    def test_confident_model_keeps_f1_one_at_threshold_zero(self):
        model, X, y = self._model()
        t = select_unknown_threshold(model, X, y)
        assert t == 0.0

    def test_argmax_property(self):
        model, X, y = self._model()
        from netvendor.classify import predict_proba

        t = select_unknown_threshold(model, X, y)
        proba = predict_proba(model, X)
        maxp = proba.max(axis=1)
        picks = [model.classes[i] for i in np.argmax(proba, axis=1)]

        def f1_at(threshold):
            preds = ["unknown" if p < threshold else c for p, c in zip(maxp, picks)]
            return micro_f1(y, preds)

        assert f1_at(t) >= f1_at(0.0)
        assert f1_at(t) >= f1_at(1.0)

    def test_deterministic(self):
        model, X, y = self._model()
        assert select_unknown_threshold(model, X, y) == select_unknown_threshold(model, X, y)

    def test_empty_validation_rejected(self):
        model, X, y = self._model()
        with pytest.raises(ValueError):
            select_unknown_threshold(model, np.zeros((0, X.shape[1])), [])
