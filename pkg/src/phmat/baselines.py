"""Non-parametric baselines at a fixed parameter: H-ACA and H^2-HCA."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aca import aca
from .chebyshev import reference_nodes
from .geometry import build_block_tree, build_cluster_tree, translation_key
from .kernels import CountedKernel, KernelEvalCounter
from .phmatrix import backward_transform, forward_transform, nested_basis


@dataclass
class LowRankFactors:
    V: np.ndarray  # n_sigma x t
    Y: np.ndarray  # n_tau x t
    converged: bool = True

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def dense(self):
        return self.V @ self.Y.T


def aca_partial(entry, shape, eps: float, r_max: int | None = None, seed: int = 0) -> LowRankFactors:
    """ACA of the matrix given by entry(rows, cols) -> values (index arrays, broadcast)."""
    if not (eps > 0):
        raise ValueError("eps must be positive")
    m, n = shape
    ca = np.arange(n)
    ra = np.arange(m)
    res = aca(lambda i: entry(np.full(n, i), ca), lambda j: entry(ra, np.full(m, j)),
              shape, eps, r_max, rng=np.random.default_rng(seed))
    return LowRankFactors(res.U, res.V.T, res.converged)


def _block_entry(kernel, Xs, Xt, theta):
    def entry(i, j):
        return kernel(Xs[i], Xt[j], theta, stage="online")
    return entry


@dataclass
class HACAMatrix:
    tree: object
    blocks: object
    far: list  # LowRankFactors per far block
    near: list  # dense per near block
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (self.tree.n, self.tree.n)

    def matvec(self, x):
        x = np.asarray(x, float)
        y = np.zeros(self.tree.n)
        for (s, t), F in zip(self.blocks.far, self.far):
            y[s.idx] += F.V @ (F.Y.T @ x[t.idx])
        for (s, t), D in zip(self.blocks.near, self.near):
            y[s.idx] += D @ x[t.idx]
        return y

    def to_dense(self):
        n = self.tree.n
        K = np.zeros((n, n))
        for (s, t), F in zip(self.blocks.far, self.far):
            K[np.ix_(s.idx, t.idx)] = F.dense()
        for (s, t), D in zip(self.blocks.near, self.near):
            K[np.ix_(s.idx, t.idx)] = D
        return K

    def metrics(self):
        n = self.tree.n
        ranks = [F.rank for F in self.far]
        ff = sum(F.V.size + F.Y.size for F in self.far)
        nf = sum(D.size for D in self.near)
        return {"n": n, "far_blocks": len(self.far), "near_blocks": len(self.near),
                "c_sp": self.blocks.c_sp, "rank": float(np.mean(ranks)) if ranks else 0.0,
                "ff_entries": ff, "ff_ratio": ff / n**2, "nf_entries": nf, "nf_ratio": nf / n**2,
                "storage_gb": (ff + nf) * 8 / 1e9}


def h_aca(points, spec, theta, l_max: int, eps: float, eta=None, counter=None,
          r_max: int | None = None, root_box=None) -> HACAMatrix:
    """H-matrix at a fixed theta: ACA per far block, dense near blocks."""
    X = np.asarray(points, float)
    th = spec.check_theta(theta)
    kernel = CountedKernel(spec, counter if counter is not None else KernelEvalCounter())
    tree = build_cluster_tree(X, l_max, root_box)
    blocks = build_block_tree(tree, eta)
    t0 = time.perf_counter()
    near = [kernel.matrix(X[s.idx], X[t.idx], th, stage="online") for s, t in blocks.near]
    t1 = time.perf_counter()
    far = [aca_partial(_block_entry(kernel, X[s.idx], X[t.idx], th), (s.size, t.size), eps, r_max)
           for s, t in blocks.far]
    t2 = time.perf_counter()
    return HACAMatrix(tree, blocks, far, near, {"nf_time": t1 - t0, "ff_time": t2 - t1})


@dataclass
class H2HCAMatrix:
    tree: object
    blocks: object
    leaf_factors: dict
    transfers: dict
    far_key: list  # index into couplings per far block
    couplings: list  # LowRankFactors of the p^d x p^d node interaction matrix
    near: list
    p_s: int
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (self.tree.n, self.tree.n)

    def matvec(self, x):
        x = np.asarray(x, float)
        xh = forward_transform(self, x)
        yh = {}
        for b, (s, t) in enumerate(self.blocks.far):
            F = self.couplings[self.far_key[b]]
            z = F.V @ (F.Y.T @ xh[t.id])
            yh[s.id] = yh[s.id] + z if s.id in yh else z
        y = backward_transform(self, yh)
        for (s, t), D in zip(self.blocks.near, self.near):
            y[s.idx] += D @ x[t.idx]
        return y

    def to_dense(self):
        n = self.tree.n
        I = np.eye(n)
        return np.column_stack([self.matvec(I[:, j]) for j in range(n)])

    def metrics(self):
        n = self.tree.n
        d = self.tree.d
        coup = sum(2 * self.p_s**d * self.couplings[k].rank for k in self.far_key)
        nf = sum(D.size for D in self.near)
        ranks = [c.rank for c in self.couplings]
        return {"n": n, "far_blocks": len(self.far_key), "near_blocks": len(self.near),
                "unique_couplings": len(self.couplings), "c_sp": self.blocks.c_sp,
                "rank": float(np.mean(ranks)) if ranks else 0.0,
                "ff_entries": coup, "ff_ratio": coup / n**2, "nf_entries": nf, "nf_ratio": nf / n**2,
                "storage_gb": (coup + nf) * 8 / 1e9}


def h2_hca(points, spec, theta, l_max: int, p_s: int, eps: float, eta=None, counter=None,
           r_max: int | None = None, root_box=None, use_cache: bool = True) -> H2HCAMatrix:
    """H^2-matrix at a fixed theta; couplings from ACA on interpolation-node interactions."""
    X = np.asarray(points, float)
    th = spec.check_theta(theta)
    kernel = CountedKernel(spec, counter if counter is not None else KernelEvalCounter())
    tree = build_cluster_tree(X, l_max, root_box)
    blocks = build_block_tree(tree, eta)
    d = X.shape[1]
    t0 = time.perf_counter()
    near = [kernel.matrix(X[s.idx], X[t.idx], th, stage="online") for s, t in blocks.near]
    t1 = time.perf_counter()
    leaf_factors, transfers = nested_basis(X, tree, p_s)
    # tensor grid of reference nodes, little-endian (dim 1 fastest)
    ref = reference_nodes(p_s)
    grid = np.stack(np.meshgrid(*([ref] * d), indexing="ij"), axis=-1)
    grid = grid.transpose(*range(d - 1, -1, -1), d).reshape(-1, d)
    far_key, couplings, seen = [], [], {}
    for s, t in blocks.far:
        key = translation_key(s, t)
        if use_cache and key in seen:
            far_key.append(seen[key])
            continue
        side = s.box.side
        off = np.asarray(key[1], float)
        # node offsets relative to the row box, same arithmetic for all blocks of a key
        A = side * grid
        B = side * (grid + off)
        F = aca_partial(_block_entry(kernel, A, B, th), (len(A), len(B)), eps, r_max)
        seen[key] = len(couplings)
        far_key.append(len(couplings))
        couplings.append(F)
    t2 = time.perf_counter()
    return H2HCAMatrix(tree, blocks, leaf_factors, transfers, far_key, couplings, near, p_s,
                       {"nf_time": t1 - t0, "ff_time": t2 - t1})
