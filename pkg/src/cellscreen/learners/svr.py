"""Epsilon-insensitive support vector regression with an RBF kernel.

Solves the standard dual with SMO over maximal-violating pairs (the 2n-variable
box-constrained QP with a single equality constraint). Kernel:
k(u, v) = exp(-gamma * ||u - v||^2) on standardized columns.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .common import ConvergenceError, FittedModel, LearnerError, Scaler, validate_training_input

SMO_TOL = 1e-3
SMO_MAX_ITER = 100_000
_TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        (A * A).sum(axis=1)[:, None]
        + (B * B).sum(axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


class SvrRbfModel(FittedModel):
    algorithm = "svr_rbf"

    def __init__(self, columns, scaler, params, train_Z, train_y, alpha, dual_coef, bias):
        super().__init__(columns, scaler, params)
        self.train_Z = train_Z
        self.train_y = train_y
        self.alpha = alpha  # 2n box variables, for KKT audits
        self.dual_coef = dual_coef  # alpha_up - alpha_down, in [-C, C]
        self.bias = bias

    def _predict(self, X: np.ndarray) -> np.ndarray:
        Z = self.scaler.transform(X)
        sv = self.dual_coef != 0.0
        if not np.any(sv):
            return np.full(X.shape[0], self.bias)
        K = rbf_kernel(Z, self.train_Z[sv], self.params["gamma"])
        return K @ self.dual_coef[sv] + self.bias

    def kkt_gap(self) -> float:
        """Recomputed maximal violating-pair gap m - M (<= 0 means KKT-optimal)."""
        n = len(self.train_y)
        K = rbf_kernel(self.train_Z, self.train_Z, self.params["gamma"])
        f = K @ self.dual_coef
        tube = self.params["tube"]
        G = np.concatenate([f + tube - self.train_y, -f + tube + self.train_y])
        z = np.concatenate([np.ones(n), -np.ones(n)])
        m, _, M, _ = _violating_pair(self.alpha, z, G, self.params["C"])
        return m - M

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "params": self.params,
            "columns": list(self.columns),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "column_mean": self.scaler.mean.tolist(),
            "column_std": self.scaler.std.tolist(),
        }


def _violating_pair(a, z, G, C):
    nzg = -z * G
    up = ((z > 0) & (a < C)) | ((z < 0) & (a > 0))
    low = ((z > 0) & (a > 0)) | ((z < 0) & (a < C))
    up_idx = np.where(up)[0]
    low_idx = np.where(low)[0]
    i = up_idx[np.argmax(nzg[up_idx])]
    j = low_idx[np.argmin(nzg[low_idx])]
    return nzg[i], int(i), nzg[j], int(j)


def fit_svr_rbf(
    X: np.ndarray,
    columns: Sequence[str],
    y: np.ndarray,
    C: float,
    gamma: float,
    tube: float,
    seed: int = 0,
    tol: float = SMO_TOL,
    max_iter: int = SMO_MAX_ITER,
) -> SvrRbfModel:
    X, y = validate_training_input(X, y)
    if C <= 0 or gamma <= 0 or tube < 0:
        raise LearnerError("require C > 0, gamma > 0, tube >= 0")
    n = X.shape[0]
    scaler = Scaler.fit(X)
    Z = scaler.transform(X)
    Z[:, scaler.frozen] = 0.0
    K = rbf_kernel(Z, Z, gamma)

    z = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([tube - y, tube + y])
    a = np.zeros(2 * n)
    G = p.copy()

    m = M = 0.0
    converged = False
    for _ in range(max_iter):
        m, i, M, j = _violating_pair(a, z, G, C)
        if m - M <= tol:
            converged = True
            break
        kij = K[i % n, j % n]
        quad = K[i % n, i % n] + K[j % n, j % n] - 2.0 * kij
        if quad <= 0.0:
            quad = _TAU
        old_ai, old_aj = a[i], a[j]
        if z[i] != z[j]:
            delta = (-G[i] - G[j]) / quad
            diff = old_ai - old_aj
            a[i] = old_ai + delta
            a[j] = old_aj + delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_ai + old_aj
            a[i] = old_ai - delta
            a[j] = old_aj + delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total
        khalf_i = K[:, i % n]
        khalf_j = K[:, j % n]
        qcol_i = z * (z[i] * np.concatenate([khalf_i, khalf_i]))
        qcol_j = z * (z[j] * np.concatenate([khalf_j, khalf_j]))
        G += qcol_i * (a[i] - old_ai) + qcol_j * (a[j] - old_aj)
    if not converged:
        raise ConvergenceError(
            f"SVR solver did not converge within {max_iter} iterations"
        )

    return SvrRbfModel(
        columns=columns,
        scaler=scaler,
        params={"C": C, "gamma": gamma, "tube": tube},
        train_Z=Z,
        train_y=y,
        alpha=a,
        dual_coef=a[:n] - a[n:],
        bias=float((m + M) / 2.0),
    )
