"""CART decision trees, a bootstrap random forest and a logistic-regression baseline.

All models work on an ``(n_samples, n_features)`` float matrix ``X`` and a
0/1 label vector ``y`` where 1 means infected.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1


class ModelFormatError(ValueError):
    """Corrupt, truncated or unsupported model file."""


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _as_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.int64).ravel()
    if len(X) == 0:
        raise ValueError("empty sample list")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature rows but {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (uninfected) or 1 (infected)")
    return X, y


# -- decision tree -------------------------------------------------------------


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2) class counts: [uninfected, infected]
    n_features: int
    max_depth: int | None = None
    min_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])

    def predict_proba(self, X) -> np.ndarray:
        c = self.counts[self.apply(X)].astype(np.float64)
        return c[:, 1] / c.sum(axis=1)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            best = max(best, d)
            if self.feature[i] >= 0:
                stack.append((int(self.left[i]), d + 1))
                stack.append((int(self.right[i]), d + 1))
        return best

    def impurity_decrease(self) -> np.ndarray:
        """Per-feature Gini decrease weighted by node sample fraction."""
        out = np.zeros(self.n_features)
        total = self.counts[0].sum()
        for i in range(self.n_nodes):
            f = self.feature[i]
            if f < 0:
                continue
            n = self.counts[i].sum()
            l, r = self.counts[self.left[i]], self.counts[self.right[i]]
            child = (l.sum() * gini(l) + r.sum() * gini(r)) / n
            out[f] += (n / total) * (gini(self.counts[i]) - child)
        return out

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        tree = cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            counts=np.array(d["counts"], dtype=np.int64).reshape(-1, 2),
            n_features=int(d["n_features"]),
            max_depth=None if d["max_depth"] is None else int(d["max_depth"]),
            min_leaf=int(d["min_leaf"]),
        )
        n = tree.n_nodes
        if n == 0 or not (len(tree.threshold) == len(tree.left) == len(tree.right) == len(tree.counts) == n):
            raise ModelFormatError("tree node arrays have inconsistent lengths")
        inner = tree.feature >= 0
        if np.any(tree.feature[inner] >= tree.n_features):
            raise ModelFormatError("feature index out of range")
        if np.any(tree.left[inner] <= np.flatnonzero(inner)) or np.any(tree.left[inner] >= n) \
                or np.any(tree.right[inner] >= n) or np.any(tree.right[inner] <= np.flatnonzero(inner)):
            raise ModelFormatError("child index out of range")
        return tree


def best_split(X, y, features, min_leaf=1):
    """Gini-optimal (feature, threshold, weighted impurity) over ``features``.

    Candidate thresholds are midpoints between consecutive distinct values.
    Returns None when no candidate leaves ``min_leaf`` samples on both sides.
    """
    n = len(y)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        pos_left = np.cumsum(ys)[:-1].astype(np.float64)
        n_left = np.arange(1, n, dtype=np.float64)
        valid = xs[1:] > xs[:-1]
        valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        n_right = n - n_left
        pos_right = ys.sum() - pos_left
        g_left = 1.0 - (pos_left / n_left) ** 2 - (1 - pos_left / n_left) ** 2
        g_right = 1.0 - (pos_right / n_right) ** 2 - (1 - pos_right / n_right) ** 2
        weighted = (n_left * g_left + n_right * g_right) / n
        weighted[~valid] = np.inf
        k = int(np.argmin(weighted))
        if best is None or weighted[k] < best[2]:
            a, b = xs[k], xs[k + 1]
            thr = a + (b - a) / 2.0
            if not a <= thr < b:
                thr = a
            best = (int(f), float(thr), float(weighted[k]))
    return best


def train_tree(X, y, max_depth=None, min_leaf=1, features_per_split=None, rng=None) -> DecisionTree:
    """Grow a CART tree greedily on Gini impurity.

    At each node a random subset of ``features_per_split`` features is tried
    first; if none of them yields an impurity-reducing split the remaining
    features are tried in random order before the node becomes a leaf.
    """
    X, y = _as_xy(X, y)
    n_features = X.shape[1]
    if features_per_split is None:
        features_per_split = max(1, int(math.isqrt(n_features)))
    if not 1 <= features_per_split <= n_features:
        raise ValueError(f"features_per_split must lie in [1, {n_features}]")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)

    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(yy):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(yy.sum())
        counts.append((len(yy) - pos, pos))
        return len(feature) - 1

    root = new_node(y)
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        parent_gini = gini(counts[node])
        if parent_gini == 0.0 or (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        perm = rng.permutation(n_features)
        split = None
        for chunk in (perm[:features_per_split], perm[features_per_split:]):
            if len(chunk) == 0:
                continue
            cand = best_split(X[idx], yy, chunk, min_leaf)
            # the margin keeps rounding noise from passing as an improvement
            if cand is not None and cand[2] < parent_gini - 1e-12:
                split = cand
                break
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(y[li])
        right[node] = new_node(y[ri])
        # push right first so the left subtree is numbered depth-first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64).reshape(-1, 2),
        n_features=n_features,
        max_depth=max_depth,
        min_leaf=min_leaf,
    )


# -- random forest -------------------------------------------------------------


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    n_estimators: int
    features_per_split: int
    rng_seed: int
    max_depth: int | None = None
    min_leaf: int = 1
    bootstrap: bool = True

    def __post_init__(self):
        if len(self.trees) != self.n_estimators:
            raise ValueError("trees length must equal n_estimators")

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_probas(self, X) -> np.ndarray:
        """(n_trees, n_samples) infected fraction at each tree's leaf."""
        return np.array([t.predict_proba(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        return self.tree_probas(X).mean(axis=0)

    def predict(self, X) -> np.ndarray:
        # ties at exactly 0.5 go to infected
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, index])


def _fit_forest_tree(X, y, index, seed, max_depth, min_leaf, features_per_split, bootstrap):
    rng = tree_rng(seed, index)
    if bootstrap:
        idx = rng.integers(0, len(y), size=len(y))
        return train_tree(X[idx], y[idx], max_depth, min_leaf, features_per_split, rng)
    return train_tree(X, y, max_depth, min_leaf, features_per_split, rng)


def forest_train(
    X,
    y,
    n_estimators=25,
    max_depth=None,
    min_leaf=1,
    seed=0,
    features_per_split=None,
    bootstrap=True,
    workers=1,
) -> RandomForest:
    """Bagged CART ensemble; tree ``i`` uses its own stream derived from (seed, i)."""
    X, y = _as_xy(X, y)
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    if features_per_split is None:
        features_per_split = max(1, int(math.isqrt(X.shape[1])))

    def fit(i):
        return _fit_forest_tree(X, y, i, seed, max_depth, min_leaf, features_per_split, bootstrap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(fit, range(n_estimators)))
    else:
        trees = [fit(i) for i in range(n_estimators)]
    return RandomForest(trees, n_estimators, features_per_split, int(seed), max_depth, min_leaf, bootstrap)


def forest_predict_proba(model: RandomForest, x) -> float:
    """Infected probability for a single feature vector."""
    x = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=np.float64)
    return float(model.predict_proba(x.reshape(1, -1))[0])


def feature_importance(model: RandomForest) -> np.ndarray:
    """Mean decrease in Gini impurity, normalised to sum to 1."""
    if not model.trees:
        raise ValueError("forest has no trees")
    imp = np.mean([t.impurity_decrease() for t in model.trees], axis=0)
    total = imp.sum()
    if total <= 0:
        return np.zeros_like(imp)
    return imp / total


# -- logistic regression -------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (X - self.mean) / safe, 0.0)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.standardize(X) @ self.weights + self.bias)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def log_loss_and_grad(w, b, Z, y):
    """Mean log-loss of ``sigmoid(Z @ w + b)`` and its gradient w.r.t. (w, b)."""
    z = Z @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    err = _sigmoid(z) - y
    return loss, Z.T @ err / len(y), float(err.mean())


def train_logistic(X, y, learning_rate=0.1, epochs=500, seed=0) -> LogisticModel:
    """Full-batch gradient descent on standardized features from a zero start.

    ``seed`` is accepted for interface symmetry; the zero initialisation and
    full-batch updates make training deterministic on their own.
    """
    X, y = _as_xy(X, y)
    if y.min() == y.max():
        raise ValueError("logistic regression needs both classes present")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    model = LogisticModel(np.zeros(X.shape[1]), 0.0, mean, std)
    Z = model.standardize(X)
    w, b = model.weights, 0.0
    yf = y.astype(np.float64)
    for _ in range(epochs):
        _, gw, gb = log_loss_and_grad(w, b, Z, yf)
        w = w - learning_rate * gw
        b = b - learning_rate * gb
    model.weights, model.bias = w, float(b)
    return model


# -- grid search ---------------------------------------------------------------


@dataclass(frozen=True)
class HyperparamGrid:
    n_estimators_choices: tuple = (5, 10, 25, 50, 100)
    max_depth_choices: tuple = (None, 4, 8, 16)
    min_leaf_choices: tuple = (1, 5)
    folds: int = 5

    def __post_init__(self):
        if not (self.n_estimators_choices and self.max_depth_choices and self.min_leaf_choices):
            raise ValueError("grid lists must be non-empty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    def points(self):
        return list(itertools.product(self.n_estimators_choices, self.max_depth_choices, self.min_leaf_choices))


@dataclass(frozen=True)
class CVRow:
    n_estimators: int
    max_depth: int | None
    min_leaf: int
    mean_f1: float
    std_f1: float


@dataclass
class GridSearchResult:
    best: dict
    table: list[CVRow]
    n_fits: int = 0
    fold_ids: np.ndarray = field(default=None, repr=False)


def stratified_folds(y, folds, seed) -> np.ndarray:
    """Fold id per sample; each class is shuffled then dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0xF01D])
    out = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise ValueError(f"class {cls} has {len(idx)} samples, fewer than {folds} folds")
        idx = idx[rng.permutation(len(idx))]
        # continue dealing where the previous class stopped to balance fold sizes
        out[idx] = (np.arange(len(idx)) + offset) % folds
        offset = (offset + len(idx)) % folds
    return out


def f1_infected(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def _depth_key(d):
    return math.inf if d is None else d


def grid_search_cv(X, y, grid: HyperparamGrid | None = None, seed=0, workers=1) -> GridSearchResult:
    """Stratified k-fold search scored by mean infected-class F1.

    Ties on mean F1 prefer fewer estimators, then shallower trees, then grid order.
    """
    X, y = _as_xy(X, y)
    grid = grid or HyperparamGrid()
    fold_ids = stratified_folds(y, grid.folds, seed)
    points = grid.points()

    def fit_point(p):
        n_est, depth, leaf = p
        scores = []
        for k in range(grid.folds):
            tr, va = fold_ids != k, fold_ids == k
            model = forest_train(X[tr], y[tr], n_est, depth, leaf, seed=seed)
            scores.append(f1_infected(model.predict(X[va]), y[va]))
        return CVRow(n_est, depth, leaf, float(np.mean(scores)), float(np.std(scores)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(fit_point, points))
    else:
        table = [fit_point(p) for p in points]

    order = sorted(
        range(len(table)),
        key=lambda i: (-table[i].mean_f1, table[i].n_estimators, _depth_key(table[i].max_depth), i),
    )
    top = table[order[0]]
    best = {"n_estimators": top.n_estimators, "max_depth": top.max_depth, "min_leaf": top.min_leaf}
    return GridSearchResult(best, table, len(points) * grid.folds, fold_ids)


def write_cv_table(table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_estimators", "max_depth", "min_leaf", "mean_f1", "std_f1"])
        for r in table:
            depth = "none" if r.max_depth is None else r.max_depth
            w.writerow([r.n_estimators, depth, r.min_leaf, repr(r.mean_f1), repr(r.std_f1)])


# -- persistence ---------------------------------------------------------------


def model_to_dict(model) -> dict:
    if isinstance(model, RandomForest):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "random_forest",
            "hyperparameters": {
                "n_estimators": model.n_estimators,
                "max_depth": model.max_depth,
                "min_leaf": model.min_leaf,
                "features_per_split": model.features_per_split,
                "bootstrap": model.bootstrap,
                "seed": model.rng_seed,
            },
            "trees": [t.to_dict() for t in model.trees],
        }
    if isinstance(model, DecisionTree):
        return {"schema_version": SCHEMA_VERSION, "kind": "decision_tree", "tree": model.to_dict()}
    if isinstance(model, LogisticModel):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "logistic_regression",
            "weights": [float(v) for v in model.weights],
            "bias": float(model.bias),
            "standardization": {
                "mean": [float(v) for v in model.mean],
                "std": [float(v) for v in model.std],
            },
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(doc):
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ModelFormatError("missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported model schema version {doc['schema_version']!r} (expected {SCHEMA_VERSION})"
        )
    try:
        kind = doc["kind"]
        if kind == "random_forest":
            hp = doc["hyperparameters"]
            trees = [DecisionTree.from_dict(t) for t in doc["trees"]]
            return RandomForest(
                trees,
                int(hp["n_estimators"]),
                int(hp["features_per_split"]),
                int(hp["seed"]),
                None if hp["max_depth"] is None else int(hp["max_depth"]),
                int(hp["min_leaf"]),
                bool(hp["bootstrap"]),
            )
        if kind == "decision_tree":
            return DecisionTree.from_dict(doc["tree"])
        if kind == "logistic_regression":
            st = doc["standardization"]
            return LogisticModel(
                np.array(doc["weights"], dtype=np.float64),
                float(doc["bias"]),
                np.array(st["mean"], dtype=np.float64),
                np.array(st["std"], dtype=np.float64),
            )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"{path}: not a text model file") from exc
    return model_from_dict(doc)
