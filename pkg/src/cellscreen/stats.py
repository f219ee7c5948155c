"""Rank statistics: mid-rank Spearman correlation and the two-sided rank-sum test."""

from __future__ import annotations

import itertools
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

#: Total sample size at or below which the rank-sum test enumerates exactly.
EXACT_RANKSUM_LIMIT = 12


def midranks(a: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their rank range."""
    a = np.asarray(a, dtype=float)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks.

    A constant input vector yields 0.0 by convention.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    if len(x) < 3:
        raise ValueError("spearman requires at least 3 observations")
    rx = midranks(x)
    ry = midranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        logger.debug("spearman on constant vector, returning 0 by convention")
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def ranksum_test(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sided Mann-Whitney/Wilcoxon rank-sum p-value.

    Exact enumeration of all group assignments when the pooled size is at
    most EXACT_RANKSUM_LIMIT, normal approximation with tie and continuity
    corrections otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples must be non-empty")
    n1, n2 = len(a), len(b)
    n = n1 + n2
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    w_obs = float(ranks[:n1].sum())
    mu = n1 * (n + 1) / 2.0
    if n <= EXACT_RANKSUM_LIMIT:
        return _exact_two_sided_p(ranks, n1, w_obs, mu)
    return _normal_two_sided_p(ranks, n1, n2, w_obs, mu)


def _exact_two_sided_p(ranks: np.ndarray, n1: int, w_obs: float, mu: float) -> float:
    dev = abs(w_obs - mu)
    total = 0
    extreme = 0
    for combo in itertools.combinations(range(len(ranks)), n1):
        w = sum(ranks[i] for i in combo)
        total += 1
        if abs(w - mu) >= dev - 1e-12:
            extreme += 1
    return extreme / total


def _normal_two_sided_p(
    ranks: np.ndarray, n1: int, n2: int, w_obs: float, mu: float
) -> float:
    n = n1 + n2
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(((counts**3 - counts)).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        return 1.0
    # continuity correction of 0.5 toward the mean
    dev = max(abs(w_obs - mu) - 0.5, 0.0)
    z = dev / math.sqrt(var)
    p = 2.0 * 0.5 * math.erfc(z / math.sqrt(2.0))
    return min(p, 1.0)
