"""Random forest regression: bagged variance-reduction trees, seeded and deterministic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .common import FittedModel, LearnerError, Scaler, validate_training_input


@dataclass
class _Tree:
    """Array-encoded regression tree. Leaf nodes have feature == -1."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[rows] = self.value[node]
                continue
            go_left = X[rows, f] <= self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out


def _resolve_max_features(max_features: float | str, p: int) -> int:
    if max_features == "sqrt":
        return max(1, int(round(math.sqrt(p))))
    frac = float(max_features)
    if not 0.0 < frac <= 1.0:
        raise LearnerError("max_features fraction must lie in (0, 1]")
    return max(1, int(round(frac * p)))


def _best_split(X, y, rows, features, min_leaf):
    """Best (feature, threshold, gain) over candidate features; None if no valid split."""
    n = rows.size
    y_node = y[rows]
    sum_all = y_node.sum()
    best = None
    for f in features:
        order = np.argsort(X[rows, f], kind="stable")
        xs = X[rows[order], f]
        ys = y_node[order]
        csum = np.cumsum(ys)
        # split after position k (1-based left size), valid where x changes
        ks = np.arange(min_leaf, n - min_leaf + 1)
        ks = ks[ks < n]
        if ks.size == 0:
            continue
        ks = ks[xs[ks - 1] < xs[ks]]
        if ks.size == 0:
            continue
        left_sum = csum[ks - 1]
        right_sum = sum_all - left_sum
        score = left_sum**2 / ks + right_sum**2 / (n - ks)
        k_best = ks[int(np.argmax(score))]
        gain = float(score.max()) - sum_all**2 / n
        if best is None or gain > best[2] + 1e-12:
            thr = float((xs[k_best - 1] + xs[k_best]) / 2.0)
            best = (int(f), thr, gain)
    if best is None or best[2] <= 1e-12:
        return None
    return best


def _build_tree(X, y, rows, rng, m_features, min_leaf, importances):
    tree = _Tree()
    n_total = rows.size
    p = X.shape[1]

    def grow(node_rows) -> int:
        node = tree.add_node()
        y_node = y[node_rows]
        tree.value[node] = float(y_node.mean())
        n = node_rows.size
        if n < 2 * min_leaf or np.all(y_node == y_node[0]):
            return node
        features = np.sort(rng.choice(p, size=m_features, replace=False))
        split = _best_split(X, y, node_rows, features, min_leaf)
        if split is None:
            return node
        f, thr, gain = split
        # impurity decrease weighted by node sample fraction
        importances[f] += gain / n_total
        go_left = X[node_rows, f] <= thr
        left = grow(node_rows[go_left])
        right = grow(node_rows[~go_left])
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = left
        tree.right[node] = right
        return node

    grow(rows)
    return tree


class RandomForestModel(FittedModel):
    algorithm = "random_forest"

    def __init__(self, columns, scaler, params, trees, importances):
        super().__init__(columns, scaler, params)
        self.trees = trees
        self.raw_importances = importances

    def _predict(self, X: np.ndarray) -> np.ndarray:
        preds = np.stack([tree.predict(X) for tree in self.trees])
        return preds.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "params": self.params,
            "columns": list(self.columns),
            "n_trees": len(self.trees),
            "importances": self.raw_importances.tolist(),
        }


def fit_random_forest(
    X: np.ndarray,
    columns: Sequence[str],
    y: np.ndarray,
    n_trees: int,
    max_features: float | str = "sqrt",
    min_leaf: int = 1,
    seed: int = 0,
) -> RandomForestModel:
    """Bagged regression trees; bootstrap size n, prediction = mean over trees."""
    X, y = validate_training_input(X, y)
    if n_trees < 1:
        raise LearnerError("n_trees must be >= 1")
    if min_leaf < 1:
        raise LearnerError("min_leaf must be >= 1")
    n, p = X.shape
    m_features = _resolve_max_features(max_features, p)
    rng = np.random.default_rng(seed)
    scaler = Scaler.fit(X)  # audit statistics; trees split on raw values

    trees = []
    importance_sum = np.zeros(p)
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        tree_importances = np.zeros(p)
        tree = _build_tree(X, y, boot, rng, m_features, min_leaf, tree_importances)
        trees.append(tree)
        importance_sum += tree_importances
    return RandomForestModel(
        columns=columns,
        scaler=scaler,
        params={"n_trees": n_trees, "max_features": max_features, "min_leaf": min_leaf},
        trees=trees,
        importances=importance_sum / n_trees,
    )
