"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation. The assignment solver
follows the same loop order so both backends return the same matching.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def lsap(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting path with row/column potentials, O(n^3). Returns the
    column assigned to each row and the total cost summed in row order.
    """
    c = [[float(v) for v in row] for row in np.asarray(cost, dtype=np.float64)]
    n = len(c)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    row_of_col = [0] * (n + 1)  # 1-based; 0 means free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            ci = c[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = ci[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    total = 0.0
    for i in range(n):
        total += c[i][col_of_row[i]]
    return col_of_row, total


def contrastive(
    sim: np.ndarray, pos: np.ndarray, cand: np.ndarray, anchors: np.ndarray
) -> tuple[float, int, np.ndarray]:
    """Sum of multi-positive contrastive terms over valid anchors.

    For anchor ``i`` with positives ``P`` and candidates ``A`` (``P`` within
    ``A``) the term is ``-log(mean_P exp(s) / sum_A exp(s))``. Anchors without
    positives are skipped. Returns ``(sum, n_valid, d sum / d sim)``.
    """
    pos = pos.astype(bool)
    cand = cand.astype(bool)
    n_pos = pos.sum(axis=1)
    valid = anchors.astype(bool) & (n_pos > 0)
    grad = np.zeros_like(sim)
    if not np.any(valid):
        return 0.0, 0, grad
    s = sim[valid]
    pm = pos[valid]
    am = cand[valid]
    s_a = np.where(am, s, -np.inf)
    s_p = np.where(pm, s, -np.inf)
    max_a = s_a.max(axis=1, keepdims=True)
    max_p = s_p.max(axis=1, keepdims=True)
    e_a = np.exp(s_a - max_a)
    e_p = np.exp(s_p - max_p)
    sum_a = e_a.sum(axis=1, keepdims=True)
    sum_p = e_p.sum(axis=1, keepdims=True)
    lse_a = max_a[:, 0] + np.log(sum_a[:, 0])
    lse_p = max_p[:, 0] + np.log(sum_p[:, 0])
    terms = lse_a - lse_p + np.log(n_pos[valid])
    grad[valid] = e_a / sum_a - e_p / sum_p
    total = 0.0
    for t in terms:
        total += float(t)
    return total, int(valid.sum()), grad
