"""Elastic net regression via cyclic coordinate descent on the Gram matrix.

Objective, on internally standardized columns and centered response:

    (1/2n) * ||y - X beta||^2
        + penalty * (mixing * ||beta||_1 + (1 - mixing)/2 * ||beta||^2)
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit

from .common import FittedModel, LearnerError, Scaler, validate_training_input

CD_TOL = 1e-6
CD_MAX_SWEEPS = 10_000


@njit(cache=True)
def _cd_sweeps(G, c, beta, l1, l2, tol, max_sweeps):  # pragma: no cover - jitted
    p = beta.shape[0]
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj == 0.0:
                continue  # frozen zero-variance column
            rho = c[j] - np.dot(G[j], beta) + gjj * beta[j]
            if rho > l1:
                new = (rho - l1) / (gjj + l2)
            elif rho < -l1:
                new = (rho + l1) / (gjj + l2)
            else:
                new = 0.0
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        if max_delta <= tol:
            break
    return sweeps


def coordinate_descent(
    G: np.ndarray,
    c: np.ndarray,
    penalty: float,
    mixing: float,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
    beta0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Run coordinate descent on G = X'X/n, c = X'y/n; returns (beta, sweeps)."""
    beta = np.zeros(len(c)) if beta0 is None else beta0.astype(float).copy()
    sweeps = _cd_sweeps(
        np.ascontiguousarray(G, dtype=float),
        np.ascontiguousarray(c, dtype=float),
        beta,
        penalty * mixing,
        penalty * (1.0 - mixing),
        tol,
        max_sweeps,
    )
    return beta, sweeps


def elastic_net_objective(
    Z: np.ndarray, yc: np.ndarray, beta: np.ndarray, penalty: float, mixing: float
) -> float:
    """Objective value on standardized design Z and centered response yc."""
    n = len(yc)
    resid = yc - Z @ beta
    return float(
        resid @ resid / (2 * n)
        + penalty
        * (mixing * np.abs(beta).sum() + (1 - mixing) / 2 * float(beta @ beta))
    )


class ElasticNetModel(FittedModel):
    algorithm = "elastic_net"

    def __init__(self, columns, scaler, params, coef, intercept):
        super().__init__(columns, scaler, params)
        self.coef = coef  # on standardized-column scale
        self.intercept = intercept

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(X) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "params": self.params,
            "columns": list(self.columns),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "column_mean": self.scaler.mean.tolist(),
            "column_std": self.scaler.std.tolist(),
        }


def fit_elastic_net(
    X: np.ndarray,
    columns: Sequence[str],
    y: np.ndarray,
    penalty: float,
    mixing: float,
    seed: int = 0,
) -> ElasticNetModel:
    """Fit by coordinate descent to tolerance CD_TOL on max coefficient change."""
    X, y = validate_training_input(X, y)
    if penalty <= 0:
        raise LearnerError("penalty must be > 0")
    if not 0.0 <= mixing <= 1.0:
        raise LearnerError("mixing must lie in [0, 1]")
    n = X.shape[0]
    scaler = Scaler.fit(X)
    Z = scaler.transform(X)
    Z[:, scaler.frozen] = 0.0
    ybar = float(y.mean())
    yc = y - ybar
    G = Z.T @ Z / n
    c = Z.T @ yc / n
    beta, _ = coordinate_descent(G, c, penalty, mixing)
    return ElasticNetModel(
        columns=columns,
        scaler=scaler,
        params={"penalty": penalty, "mixing": mixing},
        coef=beta,
        intercept=ybar,
    )
