"""Chebyshev grids, barycentric Lagrange evaluation and Kronecker helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChebGrid:
    lo: float
    hi: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def p(self) -> int:
        return len(self.nodes)


def reference_nodes(p: int) -> np.ndarray:
    """First-kind Chebyshev nodes on [0, 1], ascending."""
    return chebyshev_grid(0.0, 1.0, p).nodes


def _ref_weights(p: int) -> np.ndarray:
    # weights for ascending nodes (-1)^k sin((2k-1)pi/2p) up to a common sign
    k = np.arange(1, p + 1)
    w = (-1.0) ** k * np.sin((2 * k - 1) * np.pi / (2 * p))
    return w[::-1]


def chebyshev_grid(lo: float, hi: float, p: int) -> ChebGrid:
    if p < 1:
        raise ValueError("p must be >= 1")
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise ValueError("empty interval")
    if hi == lo:
        pad = 1e-12 * max(1.0, abs(lo))
        lo, hi = lo - pad, hi + pad
    k = np.arange(1, p + 1)
    t = np.cos((2 * k - 1) * np.pi / (2 * p))[::-1]  # ascending in [-1, 1]
    nodes = lo + 0.5 * (hi - lo) * (t + 1.0)
    return ChebGrid(lo, hi, nodes, _ref_weights(p))


def lagrange_values(grid: ChebGrid, x) -> np.ndarray:
    """Matrix L[a, j] = l_j(x_a) of Lagrange basis values at points x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - grid.nodes[None, :]
    hit = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = grid.weights[None, :] / diff
        L = q / q.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    if np.any(rows):
        L[rows] = hit[rows].astype(float)
    return L


def interpolate(grid: ChebGrid, values, x) -> np.ndarray:
    return lagrange_values(grid, x) @ np.asarray(values, float)


def face_split(A, B) -> np.ndarray:
    """Row-wise Kronecker product: row a is kron(A[a], B[a])."""
    A = np.asarray(A)
    B = np.asarray(B)
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def face_split_cols(A, B) -> np.ndarray:
    """Column-wise Kronecker product: column a is kron(A[:, a], B[:, a])."""
    return face_split(np.asarray(A).T, np.asarray(B).T).T


def kron_chain(factors) -> np.ndarray:
    """Dense A_d kron ... kron A_1 for factors = [A_1, ..., A_d]."""
    out = np.ones((1, 1))
    for A in factors:
        out = np.kron(A, out)
    return out


def fast_kron(factors, x) -> np.ndarray:
    """(A_d kron ... kron A_1) x without forming the Kronecker product.

    factors = [A_1, ..., A_d]; A_1 acts on the fastest-varying index of x.
    x may be a vector or a matrix whose columns are processed together.
    """
    x = np.asarray(x)
    shp_in = [A.shape[1] for A in factors]
    total = int(np.prod(shp_in))
    vec = x.ndim == 1
    X = x.reshape(total, -1) if not vec else x.reshape(total, 1)
    if X.shape[0] != total:
        raise ValueError("size mismatch in fast_kron")
    nc = X.shape[1]
    T = X.reshape(*shp_in, nc, order="F")
    for k, A in enumerate(factors):
        T = np.moveaxis(np.tensordot(A, T, axes=(1, k)), 0, k)
    out = T.reshape(-1, nc, order="F")
    return out[:, 0] if vec else out


def fast_kron_flops(shapes) -> int:
    """Multiply-add count of fast_kron for factor shapes [(m_1, q_1), ...]."""
    cur = [q for _, q in shapes]
    flops = 0
    for k, (m, q) in enumerate(shapes):
        other = int(np.prod(cur)) // q
        flops += 2 * m * q * other
        cur[k] = m
    return flops


def cluster_basis_factors(pts, box_lo, box_hi, p: int) -> list:
    """Per-dimension Lagrange matrices U_k (n x p) for points in a box."""
    pts = np.asarray(pts, float)
    return [lagrange_values(chebyshev_grid(box_lo[k], box_hi[k], p), pts[:, k])
            for k in range(pts.shape[1])]


def cluster_basis(factors) -> np.ndarray:
    """Face-split product U_d ... U_1 (column index little-endian, dim 1 fastest)."""
    U = factors[0]
    for F in factors[1:]:
        U = face_split(F, U)
    return U


def transfer_factors(parent_lo, parent_hi, child_lo, child_hi, p: int) -> list:
    """Per-dimension transfer factors with U_parent(child rows) = U_child E.

    E_k[j, i] = l_i^parent(eta_j^child): row j runs over the child nodes.
    """
    out = []
    for k in range(len(parent_lo)):
        pg = chebyshev_grid(parent_lo[k], parent_hi[k], p)
        cg = chebyshev_grid(child_lo[k], child_hi[k], p)
        out.append(lagrange_values(pg, cg.nodes))
    return out
