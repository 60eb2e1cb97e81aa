"""Adaptive cross approximation with partial pivoting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AcaResult:
    U: np.ndarray  # (m, k), U[rows] unit lower triangular
    V: np.ndarray  # (k, n)
    rows: list
    cols: list
    converged: bool
    n_evals: int
    last_ratio: float = 0.0  # |u||v| / |S|_F of the stopping term

    @property
    def rank(self) -> int:
        return self.U.shape[1]


def aca(get_row, get_col, shape, eps: float, max_rank: int | None = None,
        start_row: int = 0, rng=None, zero_tries: int = 3) -> AcaResult:
    """Partially pivoted ACA of an implicitly given m x n matrix.

    get_row(i) returns row i, get_col(j) returns column j. Stops when the next
    rank-one term satisfies |u||v| <= eps |S|_F (running Frobenius estimate).
    A term that already meets the criterion is not added.
    """
    m, n = shape
    if max_rank is None:
        max_rank = min(m, n)
    kmax = min(max_rank, m, n)
    rng = np.random.default_rng(0) if rng is None else rng
    U = np.zeros((m, kmax))
    V = np.zeros((kmax, n))
    rows, cols = [], []
    used_r = np.zeros(m, bool)
    used_c = np.zeros(n, bool)
    norm2 = 0.0
    scale = 0.0
    evals = 0
    i = int(start_row)
    converged = False
    misses = 0
    k = 0
    ratio = np.inf
    while k < kmax:
        row = np.asarray(get_row(i), float)
        evals += n
        used_r[i] = True
        res = row - U[i, :k] @ V[:k] if k else row.copy()
        scale = max(scale, float(np.max(np.abs(row))))
        a = np.abs(res)
        a[used_c] = -1.0
        j = int(np.argmax(a))
        if a[j] <= 1e-14 * scale or a[j] <= 0.0:
            # residual row vanishes: try a fresh row
            misses += 1
            free = np.flatnonzero(~used_r)
            if misses > zero_tries or free.size == 0:
                converged = True
                ratio = 0.0
                break
            i = int(rng.choice(free))
            continue
        col = np.asarray(get_col(j), float)
        evals += m
        resc = col - U[:, :k] @ V[:k, j] if k else col
        u = resc / resc[i]
        v = res
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        ratio = nu * nv / np.sqrt(norm2) if norm2 > 0 else np.inf
        if k and ratio <= eps:
            converged = True
            break
        cross = 2.0 * np.dot(U[:, :k].T @ u, V[:k] @ v) if k else 0.0
        norm2 = max(norm2 + cross + (nu * nv) ** 2, 0.0)
        U[:, k] = u
        V[k] = v
        k += 1
        rows.append(i)
        cols.append(j)
        used_c[j] = True
        misses = 0
        a = np.abs(u)
        a[used_r] = -1.0
        if np.all(a < 0):
            converged = True
            break
        i = int(np.argmax(a))
    if k == min(m, n):
        converged = True
    return AcaResult(U[:, :k], V[:k], rows, cols, converged, evals, float(ratio))
