"""Shared learner plumbing: validation, column standardization, fitted-model base."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class LearnerError(Exception):
    """Base class for learner failures."""


class ColumnMismatchError(LearnerError):
    """Prediction columns differ from the columns seen at fit time."""


class ConvergenceError(LearnerError):
    """A solver failed to converge within its iteration budget."""


def validate_training_input(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise LearnerError("X must be 2-d and y 1-d with matching row counts")
    if X.shape[0] < 2:
        raise LearnerError("at least 2 training rows required")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise LearnerError("non-finite value in training input")
    return X, y


@dataclass(frozen=True)
class Scaler:
    """Per-column z-scoring statistics computed from training rows only.

    Zero-variance columns are frozen: their std is replaced by 1 so the
    transform is defined, and learners keep their coefficients at zero.
    """

    mean: np.ndarray
    std: np.ndarray
    frozen: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        frozen = std == 0.0
        std = np.where(frozen, 1.0, std)
        return cls(mean=mean, std=std, frozen=frozen)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


class FittedModel:
    """Immutable fitted model; prediction requires the exact fit-time columns."""

    algorithm: str = ""

    def __init__(self, columns: Sequence[str], scaler: Scaler, params: dict):
        self.columns = tuple(columns)
        self.scaler = scaler
        self.params = dict(params)

    def _check_columns(self, columns: Sequence[str]) -> None:
        if tuple(columns) != self.columns:
            got = list(columns)
            raise ColumnMismatchError(
                f"prediction columns do not match fit columns: "
                f"expected {list(self.columns)}, got {got}"
            )

    def predict(self, X: np.ndarray, columns: Sequence[str]) -> np.ndarray:
        self._check_columns(columns)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.columns):
            raise ColumnMismatchError(
                f"prediction matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"expected {len(self.columns)}"
            )
        if X.shape[0] == 0:
            return np.empty(0)
        return self._predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError
