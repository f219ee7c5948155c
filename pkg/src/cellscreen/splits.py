"""Repeated double-split holdout protocol: outer holdouts, inner tuning splits, holdout R^2.

Feature selection, standardization, tuning, and fitting never see a holdout
sample's response or features: the design builder receives outer-train ids
only, and every model is fit on training rows exclusively.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import DesignMatrix
from .learners import FittedModel, HyperparameterGrid, LearnerError, feature_importances, fit

logger = logging.getLogger(__name__)

#: A run with more failed outer loops than this is invalid.
MAX_FAILED_LOOPS = 2


class UndefinedMetricError(ValueError):
    """R^2 is undefined because the true responses are constant (SST = 0)."""


class SplitError(ValueError):
    """The id list cannot support the requested split fractions."""


def r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination 1 - SSE/SST with the holdout mean as baseline.

    Negative values mean the predictions are worse than predicting the mean.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or len(y_true) < 2:
        raise ValueError("y_true and y_pred must be equal-length vectors of size >= 2")
    sst = float(((y_true - y_true.mean()) ** 2).sum())
    if sst == 0.0:
        raise UndefinedMetricError("R^2 undefined: constant y_true (SST = 0)")
    sse = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - sse / sst


@dataclass(frozen=True)
class SplitPlan:
    n_outer: int = 10
    outer_holdout_fraction: float = 0.2
    n_inner: int = 5
    inner_validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("n_outer and n_inner must be >= 1")
        for frac in (self.outer_holdout_fraction, self.inner_validation_fraction):
            if not 0.0 < frac < 1.0:
                raise ValueError("split fractions must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class OuterSplit:
    train_ids: tuple[str, ...]
    holdout_ids: tuple[str, ...]
    inner_splits: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]


def make_split_plan(plan: SplitPlan, ids: Sequence[str]) -> list[OuterSplit]:
    """n_outer independent random partitions, each with n_inner tuning splits.

    Fully determined by plan.seed; holdout size = round(fraction * n).
    """
    ids = list(ids)
    n = len(ids)
    if n < 10:
        raise SplitError(f"need at least 10 ids, got {n}")
    h = int(round(plan.outer_holdout_fraction * n))
    if h < 2 or n - h < 4:
        raise SplitError(f"holdout fraction {plan.outer_holdout_fraction} unusable for {n} ids")
    rng = np.random.default_rng(plan.seed)
    splits = []
    for _ in range(plan.n_outer):
        perm = rng.permutation(n)
        holdout = sorted(ids[k] for k in perm[:h])
        train = sorted(ids[k] for k in perm[h:])
        v = int(round(plan.inner_validation_fraction * len(train)))
        if v < 2 or len(train) - v < 2:
            raise SplitError("inner validation fraction unusable for outer train size")
        inner = []
        for _ in range(plan.n_inner):
            iperm = rng.permutation(len(train))
            val = tuple(sorted(train[k] for k in iperm[:v]))
            tr = tuple(sorted(train[k] for k in iperm[v:]))
            inner.append((tr, val))
        splits.append(
            OuterSplit(
                train_ids=tuple(train),
                holdout_ids=tuple(holdout),
                inner_splits=tuple(inner),
            )
        )
    return splits


@dataclass
class EvaluationResult:
    """Per-outer-loop holdout results plus the chosen grid point per loop."""

    loop_r2: list[float]
    chosen_params: list[dict]
    predictions: list[list[tuple[str, float, float]]]
    failed_loops: list[int]
    importances: list[dict[str, float] | None] | None = None

    @property
    def mean_r2(self) -> float:
        if not self.loop_r2:
            return float("nan")
        return float(np.mean(self.loop_r2))

    @property
    def r2_variance(self) -> float:
        if not self.loop_r2:
            return float("nan")
        return float(np.var(self.loop_r2))

    @property
    def valid(self) -> bool:
        return len(self.failed_loops) <= MAX_FAILED_LOOPS and bool(self.loop_r2)


DesignBuilder = Callable[[Sequence[str]], DesignMatrix]


def tune_and_evaluate(
    design_builder: DesignBuilder,
    y: Mapping[str, float],
    algorithm: str,
    grid: HyperparameterGrid,
    plan: SplitPlan,
    ids: Sequence[str],
    base_seed: int = 0,
    collect_importances: bool = False,
) -> EvaluationResult:
    """Grid search on inner splits, refit on outer train, score once on the holdout.

    The design builder is invoked with outer-train ids only, so any fold-scoped
    feature selection stays inside the training partition.
    """
    missing = [i for i in ids if i not in y]
    if missing:
        raise ValueError(f"ids without response values: {missing[:5]}")
    splits = make_split_plan(plan, ids)
    grid_points_cache: list[dict] | None = None

    result = EvaluationResult(
        loop_r2=[],
        chosen_params=[],
        predictions=[],
        failed_loops=[],
        importances=[] if collect_importances else None,
    )
    for loop_idx, split in enumerate(splits):
        try:
            design = design_builder(split.train_ids)
            points = grid.points(len(design.column_names))
            scores = np.zeros(len(points))
            for inner_idx, (inner_train, inner_val) in enumerate(split.inner_splits):
                X_tr = design.rows(inner_train)
                y_tr = np.array([y[i] for i in inner_train])
                X_val = design.rows(inner_val)
                y_val = np.array([y[i] for i in inner_val])
                for p_idx, point in enumerate(points):
                    seed = _fit_seed(base_seed, loop_idx, inner_idx + 1, p_idx)
                    model = fit(algorithm, X_tr, design.column_names, y_tr, point, seed)
                    pred = model.predict(X_val, design.column_names)
                    scores[p_idx] += r2(y_val, pred)
            best_idx = int(np.argmax(scores))  # ties -> first in grid order
            best_point = points[best_idx]
            X_train = design.rows(split.train_ids)
            y_train = np.array([y[i] for i in split.train_ids])
            model = fit(
                algorithm,
                X_train,
                design.column_names,
                y_train,
                best_point,
                _fit_seed(base_seed, loop_idx, 0, best_idx),
            )
            X_hold = design.rows(split.holdout_ids)
            y_hold = np.array([y[i] for i in split.holdout_ids])
            pred_hold = model.predict(X_hold, design.column_names)
            result.loop_r2.append(r2(y_hold, pred_hold))
            result.chosen_params.append(best_point)
            result.predictions.append(
                [(i, float(t), float(p)) for i, t, p in zip(split.holdout_ids, y_hold, pred_hold)]
            )
            if collect_importances:
                result.importances.append(feature_importances(model))
        except (LearnerError, UndefinedMetricError) as exc:
            logger.warning("outer loop %d failed: %s", loop_idx, exc)
            result.failed_loops.append(loop_idx)
    return result


def _fit_seed(base_seed: int, loop: int, inner: int, point: int) -> int:
    seq = np.random.SeedSequence([base_seed, loop, inner, point])
    return int(seq.generate_state(1)[0])
