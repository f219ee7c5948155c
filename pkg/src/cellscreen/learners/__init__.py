"""Regression learners: elastic net, RBF-kernel SVR, random forest.

All fits standardize columns from training rows internally, are pure functions
of (data, hyperparameters, seed), and return immutable fitted models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .common import (
    ColumnMismatchError,
    ConvergenceError,
    FittedModel,
    LearnerError,
    Scaler,
)
from .elastic_net import ElasticNetModel, fit_elastic_net
from .forest import RandomForestModel, fit_random_forest
from .svr import SvrRbfModel, fit_svr_rbf

#: Deterministic tie-break order between algorithms (simpler / more stable first).
ALGORITHM_ORDER = ("elastic_net", "svr_rbf", "random_forest")

IMPORTANCE_SUM_TOL = 1e-9


@dataclass(frozen=True)
class HyperparameterGrid:
    """Named parameter value lists for one algorithm.

    SVR's ``gamma_scale`` values are divided by the design column count when
    the grid is expanded, so the effective gamma adapts to dimensionality.
    """

    algorithm: str
    params: dict[str, list] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHM_ORDER:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        for name, values in self.params.items():
            if not values:
                raise ValueError(f"empty value list for parameter {name!r}")
        _validate_ranges(self.algorithm, self.params)

    def points(self, n_features: int) -> list[dict]:
        """Cartesian product of parameter lists, in declared order."""
        names = list(self.params)
        points = []
        for values in itertools.product(*(self.params[n] for n in names)):
            point = dict(zip(names, values))
            if self.algorithm == "svr_rbf":
                point["gamma"] = point.pop("gamma_scale") / max(n_features, 1)
            points.append(point)
        return points


def _validate_ranges(algorithm: str, params: dict[str, list]) -> None:
    checks = {
        "elastic_net": {
            "penalty": lambda v: v > 0,
            "mixing": lambda v: 0 <= v <= 1,
        },
        "svr_rbf": {
            "C": lambda v: v > 0,
            "gamma_scale": lambda v: v > 0,
            "tube": lambda v: v >= 0,
        },
        "random_forest": {
            "n_trees": lambda v: v >= 1,
            "max_features": lambda v: v == "sqrt" or 0 < float(v) <= 1,
            "min_leaf": lambda v: v >= 1,
        },
    }[algorithm]
    for name, values in params.items():
        if name not in checks:
            raise ValueError(f"unknown parameter {name!r} for {algorithm}")
        for v in values:
            if not checks[name](v):
                raise ValueError(f"parameter {name}={v!r} out of legal range")


def default_grid(algorithm: str) -> HyperparameterGrid:
    """Bounded desk-scale grids; strongest regularization first for elastic net."""
    if algorithm == "elastic_net":
        return HyperparameterGrid(
            algorithm,
            {"penalty": [10.0, 1.0, 0.1, 0.01, 0.001], "mixing": [0.0, 0.25, 0.5, 0.75, 1.0]},
        )
    if algorithm == "svr_rbf":
        return HyperparameterGrid(
            algorithm,
            {"C": [0.1, 1.0, 10.0, 100.0], "gamma_scale": [0.1, 1.0, 10.0], "tube": [0.01, 0.1]},
        )
    if algorithm == "random_forest":
        return HyperparameterGrid(
            algorithm,
            {"n_trees": [100], "max_features": ["sqrt", 0.25, 1.0], "min_leaf": [1, 5]},
        )
    raise ValueError(f"unknown algorithm {algorithm!r}")


def fit(
    algorithm: str,
    X: np.ndarray,
    columns: Sequence[str],
    y: np.ndarray,
    params: dict,
    seed: int = 0,
) -> FittedModel:
    if algorithm == "elastic_net":
        return fit_elastic_net(X, columns, y, seed=seed, **params)
    if algorithm == "svr_rbf":
        return fit_svr_rbf(X, columns, y, seed=seed, **params)
    if algorithm == "random_forest":
        return fit_random_forest(X, columns, y, seed=seed, **params)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def predict(model: FittedModel, X: np.ndarray, columns: Sequence[str]) -> np.ndarray:
    return model.predict(X, columns)


def feature_importances(model: FittedModel) -> dict[str, float] | None:
    """Normalized per-column importances, or None where undefined (SVR)."""
    if isinstance(model, ElasticNetModel):
        weights = np.abs(model.coef)
    elif isinstance(model, RandomForestModel):
        weights = model.raw_importances.copy()
    else:
        return None
    total = weights.sum()
    if total > 0:
        weights = weights / total
    return dict(zip(model.columns, (float(w) for w in weights)))


__all__ = [
    "ALGORITHM_ORDER",
    "ColumnMismatchError",
    "ConvergenceError",
    "ElasticNetModel",
    "FittedModel",
    "HyperparameterGrid",
    "LearnerError",
    "RandomForestModel",
    "Scaler",
    "SvrRbfModel",
    "default_grid",
    "default_grids",
    "feature_importances",
    "fit",
    "fit_elastic_net",
    "fit_random_forest",
    "fit_svr_rbf",
    "predict",
]


def default_grids(algorithms: Sequence[str]) -> dict[str, HyperparameterGrid]:
    return {alg: default_grid(alg) for alg in algorithms}
