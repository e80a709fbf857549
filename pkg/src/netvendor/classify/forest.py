"""Random-forest training, prediction, and language-neutral persistence.

Training rides on scikit-learn's forest (CART on binary one-hot columns is
standard machinery, and Gini importances come with it).  The trained trees
are exported into a self-describing JSON document - children arrays, split
columns, leaf class distributions - and a loaded model predicts by walking
those arrays directly, so any implementation language can consume the
file.  Probabilities are the mean of per-tree leaf class frequencies
rather than a majority vote, because unknown-thresholding needs scores.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from ..errors import SchemaError
from .encoding import OheVocabulary
from .metrics import UNKNOWN_LABEL

MODEL_FORMAT = "netvendor-rf-1"


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 300
    max_depth: int | None = None
    max_features: str | float = "sqrt"  # sqrt | log2 | fraction in (0,1] | all
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True
    criterion: str = "gini"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.min_samples_split < 2 or self.min_samples_leaf < 1:
            raise ValueError(f"non-positive hyperparameter in {self}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.criterion not in ("gini", "entropy"):
            raise ValueError(f"criterion {self.criterion!r} not in (gini, entropy)")
        if isinstance(self.max_features, float) and not 0 < self.max_features <= 1:
            raise ValueError("fractional max_features must be in (0, 1]")
        if isinstance(self.max_features, str) and self.max_features not in ("sqrt", "log2", "all"):
            raise ValueError(f"max_features {self.max_features!r} unknown")

    def sklearn_kwargs(self) -> dict:
        mf = 1.0 if self.max_features == "all" else self.max_features
        return {
            "n_estimators": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": mf,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "bootstrap": self.bootstrap,
            "criterion": self.criterion,
            "random_state": self.rng_seed,
        }


@dataclass
class RandomForestModel:
    classes: tuple[str, ...]
    vocabulary: OheVocabulary
    params: Hyperparams
    trees: list[dict]  # left/right/feature int arrays + dist (n_nodes, n_classes)
    importances: np.ndarray
    unknown_threshold: float | None = None
    estimator: RandomForestClassifier | None = field(default=None, repr=False, compare=False)


def _export_tree(est, n_classes: int) -> dict:
    t = est.tree_
    dist = t.value.reshape(t.node_count, n_classes).astype(np.float64)
    sums = dist.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return {
        "left": t.children_left.astype(np.int32),
        "right": t.children_right.astype(np.int32),
        "feature": t.feature.astype(np.int32),
        "dist": dist / sums,  # normalized class frequencies per node
    }


def train_forest(
    X: np.ndarray, y: list[str], params: Hyperparams, vocabulary: OheVocabulary
) -> RandomForestModel:
    y = list(y)
    if X.shape[0] != len(y):
        raise ValueError("X rows and y length differ")
    if len(set(y)) < 2:
        raise ValueError("training needs at least two classes")
    if X.shape[1] != vocabulary.width:
        raise SchemaError(f"X has {X.shape[1]} columns, vocabulary {vocabulary.width}")
    clf = RandomForestClassifier(**params.sklearn_kwargs())
    clf.fit(X, y)
    n_classes = len(clf.classes_)
    return RandomForestModel(
        classes=tuple(clf.classes_),
        vocabulary=vocabulary,
        params=params,
        trees=[_export_tree(est, n_classes) for est in clf.estimators_],
        importances=np.asarray(clf.feature_importances_, dtype=np.float64),
        estimator=clf,
    )


def _walk_tree(tree: dict, X: np.ndarray) -> np.ndarray:
    left, right, feature, dist = tree["left"], tree["right"], tree["feature"], tree["dist"]
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        feat = feature[node]
        active = np.flatnonzero(feat >= 0)
        if active.size == 0:
            return dist[node]
        rows = active
        cols = feat[rows]
        go_left = X[rows, cols] <= 0.5
        node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])


def predict_proba(model: RandomForestModel, X: np.ndarray) -> np.ndarray:
    """Mean of per-tree leaf class frequencies; rows sum to 1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float32))
    if X.shape[1] != model.vocabulary.width:
        raise SchemaError(
            f"row width {X.shape[1]} does not match vocabulary width {model.vocabulary.width}"
        )
    if model.estimator is not None:
        return model.estimator.predict_proba(X)
    total = np.zeros((X.shape[0], len(model.classes)), dtype=np.float64)
    for tree in model.trees:
        total += _walk_tree(tree, X)
    return total / len(model.trees)


def predict(
    model: RandomForestModel, X: np.ndarray, threshold: float | None = None
) -> list[str]:
    """Argmax class (ties to the lowest class index); below-threshold rows
    come back as "unknown"."""
    proba = predict_proba(model, X)
    if threshold is None:
        threshold = model.unknown_threshold
    picks = np.argmax(proba, axis=1)
    out = []
    for row, pick in enumerate(picks):
        if threshold is not None and proba[row, pick] < threshold:
            out.append(UNKNOWN_LABEL)
        else:
            out.append(model.classes[pick])
    return out


def save_model(model: RandomForestModel, path: str) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "classes": list(model.classes),
        "params": asdict(model.params),
        "vocabulary": model.vocabulary.to_dict(),
        "unknown_threshold": model.unknown_threshold,
        "importances": model.importances.tolist(),
        "trees": [
            {
                "left": t["left"].tolist(),
                "right": t["right"].tolist(),
                "feature": t["feature"].tolist(),
                "dist": t["dist"].tolist(),
            }
            for t in model.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> RandomForestModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a {MODEL_FORMAT} document: {path}")
    trees = [
        {
            "left": np.asarray(t["left"], dtype=np.int32),
            "right": np.asarray(t["right"], dtype=np.int32),
            "feature": np.asarray(t["feature"], dtype=np.int32),
            "dist": np.asarray(t["dist"], dtype=np.float64),
        }
        for t in doc["trees"]
    ]
    return RandomForestModel(
        classes=tuple(doc["classes"]),
        vocabulary=OheVocabulary.from_dict(doc["vocabulary"]),
        params=Hyperparams(**doc["params"]),
        trees=trees,
        importances=np.asarray(doc["importances"], dtype=np.float64),
        unknown_threshold=doc["unknown_threshold"],
    )
