"""Far-field blocks: coupling tensors in TT form and their factorizations.

The coupling tensor of an admissible block has modes
(i_1..i_d, k_1..k_dtheta, j_1..j_d): spatial interpolation nodes of the row
box, parameter interpolation nodes, spatial nodes of the column box.
"""
from __future__ import annotations

import numpy as np

from .chebyshev import chebyshev_grid, lagrange_values, face_split, reference_nodes
from .kernels import CountedKernel, DomainError
from .tt import EntryOracle, TTTensor, mode2_product, unfold_right


def theta_grids(spec, p_theta: int) -> list:
    lo, hi = spec.box
    return [chebyshev_grid(lo[i], hi[i], p_theta) for i in range(spec.d_theta)]


def parametric_vectors(theta, grids) -> list:
    """Lagrange values v_i(theta_i) on each parameter grid."""
    th = np.atleast_1d(np.asarray(theta, float))
    if th.shape != (len(grids),):
        raise ValueError(f"theta needs {len(grids)} components")
    for i, g in enumerate(grids):
        tol = 1e-12 * max(1.0, abs(g.hi))
        if not (g.lo - tol <= th[i] <= g.hi + tol):
            raise DomainError(f"theta[{i}]={th[i]} outside [{g.lo}, {g.hi}]")
    return [lagrange_values(g, th[i : i + 1])[0] for i, g in enumerate(grids)]


def coupling_oracle(kernel: CountedKernel, side, offset, p_s: int, grids, stage="offline") -> EntryOracle:
    """Entry oracle of the coupling tensor for a box pair given by side and offset.

    Entries depend only on (side, offset), so blocks sharing a translation key
    get bitwise-identical values.
    """
    side = np.asarray(side, float)
    off = np.asarray(offset, float)
    d = len(side)
    t = reference_nodes(p_s)
    gnodes = [g.nodes for g in grids]
    dth = len(grids)
    shape = (p_s,) * d + tuple(g.p for g in grids) + (p_s,) * d

    def fn(idx):
        r2 = np.zeros(idx.shape[0])
        for k in range(d):
            diff = side[k] * (t[idx[:, k]] - t[idx[:, d + dth + k]] - off[k])
            r2 += diff * diff
        th = np.stack([gnodes[i][idx[:, d + i]] for i in range(dth)], axis=1)
        return kernel.radial(np.sqrt(r2), th, stage)

    return EntryOracle(fn, shape)


def row_factor(cores, U_factors) -> np.ndarray:
    """S = sum over row spatial modes: n_sigma x r_d."""
    S = U_factors[0] @ cores[0][0]
    for U, G in zip(U_factors[1:], cores[1 : len(U_factors)]):
        S = face_split(U, S) @ unfold_right(G)
    return S


def col_factor(cores, U_factors) -> np.ndarray:
    """T with K_far ~ S H T^T: n_tau x r_{d+dtheta}."""
    d = len(U_factors)
    T = U_factors[-1] @ cores[-1][:, :, 0].T
    for m in range(d - 2, -1, -1):
        G = cores[len(cores) - d + m]
        r0, p, r1 = G.shape
        T = face_split(U_factors[m], T) @ G.transpose(1, 2, 0).reshape(p * r1, r0)
    return T


def coupling_middle(cores, vectors, d: int) -> np.ndarray:
    """H(theta): product of parameter cores contracted with Lagrange vectors."""
    H = None
    for i, v in enumerate(vectors):
        M = mode2_product(cores[d + i], v)
        H = M if H is None else H @ M
    return H


def left_interface(cores, d: int) -> np.ndarray:
    """Dense L (p^d x r_d), row index little-endian."""
    L = cores[0][0]
    for G in cores[1:d]:
        r0, p, r1 = G.shape
        L = np.einsum("na,aib->nib", L, G).reshape(-1, r1, order="F")
    return L


def right_interface(cores, d: int) -> np.ndarray:
    """Dense R (p^d x r_{d+dtheta}) so that the coupling is L H R^T."""
    tail = cores[len(cores) - d :]
    R = tail[-1][:, :, 0].T  # (p, r)
    for G in tail[-2::-1]:
        r0, p, r1 = G.shape
        # R rows: multi-index of later modes; new fastest index is this mode
        R = np.einsum("ajb,nb->jna", G, R).reshape(-1, r0, order="F")
    return R


def apply_right(cores, xhat, d: int) -> np.ndarray:
    """R^T xhat via a right-to-left contraction."""
    tail = cores[len(cores) - d :]
    p = tail[-1].shape[1]
    rest = xhat.size // p
    W = xhat.reshape(rest, p, order="F") @ tail[-1][:, :, 0].T
    for G in tail[-2::-1]:
        r0, pk, r1 = G.shape
        rest //= pk
        W = W.reshape(rest, pk * r1, order="F") @ G.transpose(1, 2, 0).reshape(pk * r1, r0, order="F")
    return W.reshape(-1)


def apply_left(cores, w, d: int) -> np.ndarray:
    """L w via a right-to-left expansion through the row cores."""
    Y = np.asarray(w).reshape(-1, 1)
    for G in cores[d - 1 :: -1]:
        r0, p, r1 = G.shape
        Y = (unfold_right(G) @ Y).reshape(r0, -1, order="F")
    return Y.reshape(-1)


def h2_multiply(cores, H, xhat, d: int) -> np.ndarray:
    """C xhat = L H R^T xhat without forming L, R or C."""
    return apply_left(cores, H @ apply_right(cores, xhat, d), d)
