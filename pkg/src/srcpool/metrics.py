"""Clustering metrics: NMI, Hungarian alignment, cluster accuracy, macro-F1.

NMI uses the arithmetic mean of the two entropies as normalizer. Other
normalizations (geometric, max) give noticeably different numbers, so
compare results only across identical variants.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, NonFinite


def _check_pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true).ravel()
    b = np.asarray(y_pred).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"label vectors have lengths {a.size} and {b.size}")
    if a.size == 0:
        raise ValueError("labels must be non-empty")
    return a, b


def contingency(y_true, y_pred) -> np.ndarray:
    """Counts ``C[t, p]`` over the sorted distinct labels of each vector."""
    a, b = _check_pair(y_true, y_pred)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    c = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(c, (ai, bi), 1)
    return c


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(y_true, y_pred) -> float:
    """Normalized mutual information, arithmetic-mean normalization."""
    c = contingency(y_true, y_pred)
    n = c.sum()
    h_true = _entropy(c.sum(axis=1))
    h_pred = _entropy(c.sum(axis=0))
    if h_true == 0 and h_pred == 0:
        return 1.0
    if h_true == 0 or h_pred == 0:
        return 0.0
    nz = c > 0
    pij = c[nz] / n
    pi = (c.sum(axis=1)[:, None] / n).repeat(c.shape[1], axis=1)[nz]
    pj = (c.sum(axis=0)[None, :] / n).repeat(c.shape[0], axis=0)[nz]
    mi = float(np.sum(pij * np.log(pij / (pi * pj))))
    return float(min(1.0, max(0.0, mi / ((h_true + h_pred) / 2))))


def _assignment_cost(cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimum-cost perfect assignment (shortest augmenting path with potentials).

    Returns the optimal cost and ``col_of_row``. O(K^3).
    """
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = inf, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return float(cost[np.arange(n), col_of_row].sum()), col_of_row


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Permutation ``pi`` minimizing ``sum_k cost[k, pi[k]]``.

    Among optimal permutations the lexicographically smallest is returned,
    found by fixing rows in order to the smallest column that keeps the
    remaining subproblem optimal.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost must be a square matrix")
    if not np.all(np.isfinite(c)):
        raise NonFinite("cost matrix must be finite")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    best, _ = _assignment_cost(c)
    tol = 1e-9 * max(1.0, float(np.abs(c).max()) * n)
    perm = np.empty(n, dtype=np.int64)
    rows = list(range(n))
    cols = list(range(n))
    spent = 0.0
    for r in range(n):
        rest_rows = rows[r + 1 :]
        for col in cols:
            rest_cols = [x for x in cols if x != col]
            sub = spent + c[r, col]
            if rest_rows:
                sub += _assignment_cost(c[np.ix_(rest_rows, rest_cols)])[0]
            if sub <= best + tol:
                perm[r] = col
                spent += c[r, col]
                cols = rest_cols
                break
    return perm


def _aligned_codes(y_true, y_pred) -> tuple[np.ndarray, np.ndarray, int]:
    """True class codes, aligned predicted codes, and the number of classes.

    Predicted clusters are mapped onto class codes by maximizing agreement.
    Ties between maximum-agreement maps go to the one with the larger sum of
    per-class F1, which keeps both accuracy and macro-F1 independent of how
    the predicted ids are numbered. Surplus clusters land on codes >= the
    class count and match nothing.
    """
    a, b = _check_pair(y_true, y_pred)
    ta, ai = np.unique(a, return_inverse=True)
    tb, bi = np.unique(b, return_inverse=True)
    k = max(ta.size, tb.size)
    agree = np.zeros((k, k), dtype=np.int64)
    np.add.at(agree, (bi, ai), 1)
    pred_size = agree.sum(axis=1)
    true_size = agree.sum(axis=0)
    denom = pred_size[:, None] + true_size[None, :]
    f1 = np.divide(2.0 * agree, denom, out=np.zeros((k, k)), where=denom > 0)
    # the F1 sum is at most k, so the scaled bonus never outweighs one agreement
    pi = hungarian(-(agree + f1 / (2.0 * (k + 1))))
    return ai, pi[bi], ta.size


def clust_acc(y_true, y_pred) -> float:
    """Fraction of nodes whose aligned predicted label equals the true one."""
    truth, pred, _ = _aligned_codes(y_true, y_pred)
    return float(np.mean(pred == truth))


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean over true classes of per-class F1 after alignment.

    A class with zero precision and recall contributes 0.
    """
    truth, pred, num_classes = _aligned_codes(y_true, y_pred)
    total = Fraction(0)
    for cls in range(num_classes):
        tp = int(np.sum((pred == cls) & (truth == cls)))
        fp = int(np.sum((pred == cls) & (truth != cls)))
        fn = int(np.sum((pred != cls) & (truth == cls)))
        # 2PR/(P+R) == 2TP/(2TP+FP+FN); exact rationals avoid rounding drift
        if tp:
            total += Fraction(2 * tp, 2 * tp + fp + fn)
    return float(total / num_classes)


def evaluate(y_true: Sequence[int], y_pred: Sequence[int]) -> dict[str, float]:
    return {
        "nmi": nmi(y_true, y_pred),
        "clust_acc": clust_acc(y_true, y_pred),
        "macro_f1": macro_f1(y_true, y_pred),
    }
