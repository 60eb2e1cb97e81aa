"""Near-field blocks: parameter-dependent dense blocks stored as TTs."""
from __future__ import annotations

import numpy as np

from .tt import EntryOracle, TTTensor, mode2_product, tt_cross


def near_oracle(kernel, Xs, Xt, grids, stage="offline") -> EntryOracle:
    """Tensor with entries kappa(x_i, y_j; eta_k), first mode i + n_s j."""
    Xs = np.asarray(Xs, float)
    Xt = np.asarray(Xt, float)
    ns = Xs.shape[0]
    gnodes = [g.nodes for g in grids]
    shape = (ns * Xt.shape[0],) + tuple(g.p for g in grids)

    def fn(idx):
        flat = idx[:, 0]
        diff = Xs[flat % ns] - Xt[flat // ns]
        r = np.sqrt(np.sum(diff * diff, axis=1))
        th = np.stack([gnodes[i][idx[:, 1 + i]] for i in range(len(gnodes))], axis=1)
        return kernel.radial(r, th, stage)

    return EntryOracle(fn, shape)


def nearfield_offline(kernel, Xs, Xt, grids, eps, r_max=150, seed=0, stage="offline") -> TTTensor:
    o = near_oracle(kernel, Xs, Xt, grids, stage)
    tt = tt_cross(o, eps=eps, r_max=r_max, seed=seed)
    tt.info["shape2"] = (len(Xs), len(Xt))
    return tt


def nearfield_online(tt: TTTensor, vectors) -> np.ndarray:
    """Dense block D(theta) from the near-field TT, no kernel evaluations."""
    w = np.ones((1, 1))
    for G, v in zip(tt.cores[:0:-1], vectors[::-1]):
        w = mode2_product(G, v) @ w
    D = tt.cores[0][0] @ w[:, 0]
    ns, nt = tt.info["shape2"]
    return D.reshape(ns, nt, order="F")
