"""Parametric H and H^2 matrices: offline build, online instantiation, MVM."""
from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import farfield as ff
from .chebyshev import cluster_basis_factors, fast_kron, transfer_factors
from .geometry import Box, build_block_tree, build_cluster_tree, translation_key
from .kernels import CountedKernel, KernelEvalCounter, KernelSpec
from .nearfield import nearfield_offline, nearfield_online
from .tt import tt_cross


@dataclass
class PHConfig:
    l_max: int = 2
    p_s: int = 15
    p_theta: int = 27
    eps: float = 1e-5
    eta: float | None = None
    r_max_far: int = 120
    r_max_near: int = 150
    near_mode: str = "tt"
    use_cache: bool = True
    seed: int = 0
    threads: int | None = None

    def validate(self):
        if self.l_max < 0:
            raise ValueError("l_max must be >= 0")
        if self.p_s < 1 or self.p_theta < 1:
            raise ValueError("interpolation orders must be >= 1")
        if not (self.eps > 0):
            raise ValueError("eps must be positive")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.near_mode not in ("tt", "direct"):
            raise ValueError("near_mode must be 'tt' or 'direct'")


def n_workers(cfg: PHConfig | None = None, serial: bool = False) -> int:
    if serial:
        return 1
    cap = os.environ.get("PHMAT_THREADS")
    n = os.cpu_count() or 1
    if cfg is not None and cfg.threads:
        n = min(n, cfg.threads)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class ParametricMatrix:
    """Offline product: everything needed to instantiate K(theta) without kernel calls."""

    fmt: str  # "h" or "h2"
    spec: KernelSpec
    cfg: PHConfig
    points: np.ndarray
    tree: object
    blocks: object
    grids: list
    far_tt: list  # coupling index per far block
    couplings: list  # TTTensor list
    keys: list  # translation key per coupling
    S: list = field(default_factory=list)
    T: list = field(default_factory=list)
    near: list = field(default_factory=list)  # TTTensor per near block (tt mode)
    leaf_factors: dict = field(default_factory=dict)  # node id -> [U_1..U_d]
    transfers: dict = field(default_factory=dict)  # child id -> [E_1..E_d]
    stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def nested_basis(X, tree, p_s: int):
    """Leaf cluster-basis factors and per-child transfer factors."""
    leaf_factors, transfers = {}, {}
    for v in tree.nodes:
        if v.is_leaf and v.size > 0:
            leaf_factors[v.id] = cluster_basis_factors(X[v.idx], v.box.lo, v.box.hi, p_s)
        if v.parent is not None:
            P = v.parent.box
            transfers[v.id] = transfer_factors(P.lo, P.hi, v.box.lo, v.box.hi, p_s)
    return leaf_factors, transfers


def _uniform_levels(far) -> bool:
    # translation keys assume one box size per level
    sides = {}
    for s, t in far:
        for v in (s, t):
            ref = sides.setdefault(v.level, v.box.side)
            if not np.allclose(ref, v.box.side, rtol=1e-12, atol=0):
                warnings.warn("boxes on one level differ in size; translation cache disabled")
                return False
    return True


def offline(points, spec: KernelSpec, cfg: PHConfig, fmt: str = "h",
            counter: KernelEvalCounter | None = None, root_box: Box | None = None,
            serial: bool = False) -> ParametricMatrix:
    """Build the parameter-independent representation ("h" or "h2")."""
    if fmt not in ("h", "h2"):
        raise ValueError("fmt must be 'h' or 'h2'")
    cfg.validate()
    X = np.asarray(points, float)
    counter = counter if counter is not None else KernelEvalCounter()
    kernel = CountedKernel(spec, counter)
    workers = n_workers(cfg, serial)
    d = X.shape[1]
    tree = build_cluster_tree(X, cfg.l_max, root_box)
    blocks = build_block_tree(tree, cfg.eta)
    grids = ff.theta_grids(spec, cfg.p_theta)
    dth = spec.d_theta

    t0 = time.perf_counter()
    c0 = counter.total
    # far field: one coupling TT per translation key (or per block)
    far_tt, couplings, keys = [], [], []
    jobs = []
    seen = {}
    use_cache = cfg.use_cache and _uniform_levels(blocks.far)
    for s, t in blocks.far:
        key = translation_key(s, t)
        if use_cache and key in seen:
            far_tt.append(seen[key])
            continue
        seen[key] = len(jobs)
        far_tt.append(len(jobs))
        jobs.append((s.box.side.copy(), np.array(key[1], float)))
        keys.append(key)

    def do_coupling(job):
        side, off = job
        o = ff.coupling_oracle(kernel, side, off, cfg.p_s, grids, "offline_far")
        return tt_cross(o, eps=cfg.eps, r_max=cfg.r_max_far, seed=cfg.seed)

    couplings = _pmap(do_coupling, jobs, workers)

    pm = ParametricMatrix(fmt, spec, cfg, X, tree, blocks, grids, far_tt, couplings, keys)
    _attach_bases(pm)
    t1 = time.perf_counter()
    c1 = counter.total

    # near field
    if cfg.near_mode == "tt":
        def do_near(blk):
            s, t = blk
            return nearfield_offline(kernel, X[s.idx], X[t.idx], grids, cfg.eps, cfg.r_max_near,
                                     cfg.seed, stage="offline_near")

        pm.near = _pmap(do_near, blocks.near, workers)
    t2 = time.perf_counter()
    pm.stats = {
        "ff_offline_time": t1 - t0,
        "nf_offline_time": t2 - t1,
        "ff_offline_evals": c1 - c0,
        "nf_offline_evals": counter.total - c1,
        "capped_blocks": sum(bool(c.info.get("capped")) for c in couplings)
        + sum(bool(c.info.get("capped")) for c in pm.near),
    }
    return pm


def _attach_bases(pm: ParametricMatrix):
    # point-dependent far-field data; needs no kernel evaluations
    X, p_s = pm.points, pm.cfg.p_s
    pm.S, pm.T, pm.leaf_factors, pm.transfers = [], [], {}, {}
    if pm.fmt == "h":
        memo = {}

        def factors(v):
            if v.id not in memo:
                memo[v.id] = cluster_basis_factors(X[v.idx], v.box.lo, v.box.hi, p_s)
            return memo[v.id]

        for b, (s, t) in enumerate(pm.blocks.far):
            G = pm.couplings[pm.far_tt[b]].cores
            pm.S.append(ff.row_factor(G, factors(s)))
            pm.T.append(ff.col_factor(G, factors(t)))
    else:
        pm.leaf_factors, pm.transfers = nested_basis(X, pm.tree, p_s)


def to_format(pm: ParametricMatrix, fmt: str) -> ParametricMatrix:
    """Same offline tensors in the other format ("h" or "h2"), no kernel evaluations."""
    if fmt not in ("h", "h2"):
        raise ValueError("fmt must be 'h' or 'h2'")
    out = ParametricMatrix(fmt, pm.spec, pm.cfg, pm.points, pm.tree, pm.blocks, pm.grids, pm.far_tt,
                           pm.couplings, pm.keys, near=pm.near, stats=dict(pm.stats))
    _attach_bases(out)
    return out


def offline_h(points, spec, cfg, **kw) -> ParametricMatrix:
    return offline(points, spec, cfg, "h", **kw)


def offline_h2(points, spec, cfg, **kw) -> ParametricMatrix:
    return offline(points, spec, cfg, "h2", **kw)


@dataclass
class Instantiated:
    pm: ParametricMatrix
    theta: np.ndarray
    H: list  # middle factor per coupling
    D: list  # dense near block per near block
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return (self.pm.n, self.pm.n)

    def matvec(self, x):
        return mvm_h(self, x) if self.pm.fmt == "h" else mvm_h2(self, x)

    def to_dense(self) -> np.ndarray:
        pm = self.pm
        K = np.zeros((pm.n, pm.n))
        for (s, t), D in zip(pm.blocks.near, self.D):
            K[np.ix_(s.idx, t.idx)] = D
        for b, (s, t) in enumerate(pm.blocks.far):
            K[np.ix_(s.idx, t.idx)] = far_block_dense(self, b)
        return K


def far_block_dense(inst: Instantiated, b: int) -> np.ndarray:
    pm = inst.pm
    ci = pm.far_tt[b]
    H = inst.H[ci]
    if pm.fmt == "h":
        return pm.S[b] @ H @ pm.T[b].T
    s, t = pm.blocks.far[b]
    G = pm.couplings[ci].cores
    d = pm.d
    L = ff.left_interface(G, d)
    R = ff.right_interface(G, d)
    Us = _node_basis(pm, s)
    Ut = _node_basis(pm, t)
    return Us @ (L @ H @ R.T) @ Ut.T


def _node_basis(pm, v) -> np.ndarray:
    # dense cluster basis of any node from its points (used only for to_dense)
    from .chebyshev import cluster_basis
    return cluster_basis(cluster_basis_factors(pm.points[v.idx], v.box.lo, v.box.hi, pm.cfg.p_s))


def online(pm: ParametricMatrix, theta, counter: KernelEvalCounter | None = None) -> Instantiated:
    """Instantiate K(theta). In tt near mode this performs no kernel evaluations.

    In direct near mode the near blocks are evaluated densely, counted on `counter`.
    """
    th = pm.spec.check_theta(theta)
    t0 = time.perf_counter()
    vec = ff.parametric_vectors(th, pm.grids)
    H = [ff.coupling_middle(c.cores, vec, pm.d) for c in pm.couplings]
    t1 = time.perf_counter()
    if pm.cfg.near_mode == "tt":
        D = [nearfield_online(tt, vec) for tt in pm.near]
    else:
        k = CountedKernel(pm.spec, counter if counter is not None else KernelEvalCounter())
        D = [k.matrix(pm.points[s.idx], pm.points[t.idx], th, stage="online") for s, t in pm.blocks.near]
    t2 = time.perf_counter()
    return Instantiated(pm, th, H, D, {"ff_online_time": t1 - t0, "nf_online_time": t2 - t1})


def _check_x(inst, x):
    x = np.asarray(x, float)
    if x.shape != (inst.pm.n,):
        raise ValueError(f"x must have shape ({inst.pm.n},)")
    return x


def _near_apply(inst, x, y):
    for (s, t), D in zip(inst.pm.blocks.near, inst.D):
        y[s.idx] += D @ x[t.idx]


def mvm_h(inst: Instantiated, x) -> np.ndarray:
    pm = inst.pm
    if pm.fmt != "h":
        raise ValueError("mvm_h needs an H-format matrix")
    x = _check_x(inst, x)
    y = np.zeros(pm.n)
    for b, (s, t) in enumerate(pm.blocks.far):
        y[s.idx] += pm.S[b] @ (inst.H[pm.far_tt[b]] @ (pm.T[b].T @ x[t.idx]))
    _near_apply(inst, x, y)
    return y


def forward_transform(pm, x) -> dict:
    """xhat_v = U_v^T x_v for every node, computed leaf-up with transfer matrices.

    pm needs tree, leaf_factors and transfers attributes.
    """
    xh = {}
    for v in reversed(pm.tree.nodes):  # children before parents
        if v.size == 0:
            continue
        if v.is_leaf:
            U = pm.leaf_factors[v.id]
            # U_v^T x = sum_a x_a kron_k U_k[a]; contract dims one at a time
            xh[v.id] = _leaf_transpose_apply(U, x[v.idx])
        else:
            acc = None
            for c in v.children:
                if c.id in xh:
                    z = fast_kron([E.T for E in pm.transfers[c.id]], xh[c.id])
                    acc = z if acc is None else acc + z
            xh[v.id] = acc
    return xh


def _leaf_transpose_apply(U, xv) -> np.ndarray:
    # face-split transpose product: W = U_1^T diag(x) ... built row-wise
    W = U[0] * xv[:, None]
    for F in U[1:]:
        W = (F[:, :, None] * W[:, None, :]).reshape(W.shape[0], -1)
    return W.sum(axis=0)


def _leaf_apply(U, yh) -> np.ndarray:
    # U_v yh with U_v the face-split product, without forming it
    n = U[0].shape[0]
    p = [F.shape[1] for F in U]
    Y = yh.reshape(-1, p[-1], order="F") @ U[-1].T  # (rest, n)
    for F in U[-2::-1]:
        rest = Y.shape[0] // F.shape[1]
        Y = Y.reshape(rest, F.shape[1], n, order="F")
        Y = np.einsum("rin,ni->rn", Y, F)
    return Y[0]


def backward_transform(pm, yh: dict) -> np.ndarray:
    y = np.zeros(pm.tree.n)
    for v in pm.tree.nodes:  # parents before children
        if v.id not in yh or v.size == 0:
            continue
        if v.is_leaf:
            y[v.idx] += _leaf_apply(pm.leaf_factors[v.id], yh[v.id])
        else:
            for c in v.children:
                if c.size == 0:
                    continue
                z = fast_kron(pm.transfers[c.id], yh[v.id])
                yh[c.id] = yh[c.id] + z if c.id in yh else z
    return y


def mvm_h2(inst: Instantiated, x) -> np.ndarray:
    pm = inst.pm
    if pm.fmt != "h2":
        raise ValueError("mvm_h2 needs an H2-format matrix")
    x = _check_x(inst, x)
    xh = forward_transform(pm, x)
    yh = {}
    for b, (s, t) in enumerate(pm.blocks.far):
        ci = pm.far_tt[b]
        z = ff.h2_multiply(pm.couplings[ci].cores, inst.H[ci], xh[t.id], pm.d)
        yh[s.id] = yh[s.id] + z if s.id in yh else z
    y = backward_transform(pm, yh)
    _near_apply(inst, x, y)
    return y


def metrics(pm: ParametricMatrix) -> dict:
    """Storage and rank statistics (entries, n^2-normalized ratios)."""
    n = pm.n
    d = pm.d
    dth = pm.spec.d_theta
    nf = sum(s.size * t.size for s, t in pm.blocks.near)
    ff_h = 0
    coup = 0
    ranks = []
    for b, (s, t) in enumerate(pm.blocks.far):
        c = pm.couplings[pm.far_tt[b]]
        r = c.ranks
        rd, rt = r[d], r[d + dth]
        ff_h += s.size * rd + t.size * rt + rd * rt
        coup += sum(G.size for G in c.cores[:d]) + sum(G.size for G in c.cores[d + dth:]) + rd * rt
        ranks.append(max(rd, rt))
    # one value per stored coupling TT (unique translation keys when cached)
    key_ranks = [max(c.ranks[d], c.ranks[d + dth]) for c in pm.couplings]
    basis = sum(sum(F.size for F in U) for U in pm.leaf_factors.values())
    basis += sum(sum(E.size for E in Es) for Es in pm.transfers.values())
    out = {
        "n": n,
        "far_blocks": len(pm.blocks.far),
        "near_blocks": len(pm.blocks.near),
        "unique_couplings": len(pm.couplings),
        "c_sp": pm.blocks.c_sp,
        "nf_entries": nf,
        "nf_ratio": nf / n**2,
        "rank": float(np.mean(key_ranks)) if key_ranks else 0.0,
        "rank_all_blocks": float(np.mean(ranks)) if ranks else 0.0,
        "nf_tt_entries": sum(tt.storage for tt in pm.near),
        "coupling_tt_entries": sum(c.storage for c in pm.couplings),
    }
    if pm.fmt == "h":
        out["ff_entries"] = ff_h
        out["ff_ratio"] = ff_h / n**2
    else:
        out["ff_entries"] = coup
        out["ff_ratio"] = coup / n**2
        out["basis_entries"] = basis
    out["storage_gb"] = (out["ff_entries"] + nf) * 8 / 1e9
    return out
