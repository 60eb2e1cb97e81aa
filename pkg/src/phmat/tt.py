"""Tensor train container, cross approximation and rounding.

Cores have shape (r_{k-1}, m_k, r_k). Multi-indices are flattened
little-endian (first index fastest), matching Fortran-order reshapes.
"""
from __future__ import annotations

import warnings
from itertools import repeat
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .aca import aca


@dataclass
class TTTensor:
    cores: list
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.cores:
            raise ValueError("a TT needs at least one core")
        # contiguous cores keep contractions bitwise reproducible across copies
        self.cores = [np.ascontiguousarray(G, dtype=float) for G in self.cores]
        for k, G in enumerate(self.cores):
            if np.ndim(G) != 3:
                raise ValueError(f"core {k} is not 3-dimensional")
            if k and G.shape[0] != self.cores[k - 1].shape[2]:
                raise ValueError(f"rank mismatch between cores {k - 1} and {k}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple:
        return tuple(G.shape[1] for G in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(G.shape[2] for G in self.cores)

    @property
    def storage(self) -> int:
        return int(sum(G.size for G in self.cores))

    def entries(self, idx) -> np.ndarray:
        return tt_entries(self, idx)

    def full(self, max_entries: int = 10**7) -> np.ndarray:
        return tt_full(self, max_entries)

    def reversed(self) -> "TTTensor":
        return TTTensor([G.transpose(2, 1, 0) for G in self.cores[::-1]], dict(self.info))


def unfold_right(G) -> np.ndarray:
    """(r_{k-1} m_k) x r_k unfolding, row index a + r_{k-1} i."""
    r0, m, r1 = G.shape
    return G.reshape(r0 * m, r1, order="F")


def unfold_left(G) -> np.ndarray:
    """r_{k-1} x (m_k r_k) unfolding, column index i + m_k b."""
    r0, m, r1 = G.shape
    return G.reshape(r0, m * r1, order="F")


def mode2_product(G, v) -> np.ndarray:
    """Contract the middle index of a core with a vector: r_{k-1} x r_k."""
    return np.einsum("aib,i->ab", G, v)


def mode_k_product(X, k: int, M) -> np.ndarray:
    """Contract mode k of X with M.

    A matrix M (p x m_k) replaces mode k by a mode of size p; a vector removes it.
    """
    X = np.asarray(X)
    M = np.asarray(M)
    if not 0 <= k < X.ndim:
        raise ValueError("mode out of range")
    if M.shape[-1] != X.shape[k]:
        raise ValueError(f"mode {k} has size {X.shape[k]}, operand has {M.shape[-1]}")
    if M.ndim == 1:
        return np.tensordot(X, M, axes=(k, 0))
    return np.moveaxis(np.tensordot(M, X, axes=(1, k)), 0, k)


def tt_entries(tt: TTTensor, idx) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(idx, dtype=np.intp))
    if idx.shape[1] != tt.order:
        raise ValueError("index length does not match tensor order")
    for k, m in enumerate(tt.shape):
        if np.any(idx[:, k] < 0) or np.any(idx[:, k] >= m):
            raise IndexError(f"index out of range in mode {k}")
    v = np.ones((idx.shape[0], 1))
    for k, G in enumerate(tt.cores):
        # v (N, r0), G[:, i_k, :] (N, r0, r1)
        v = np.einsum("na,nab->nb", v, G.transpose(1, 0, 2)[idx[:, k]])
    return v[:, 0]


def tt_full(tt: TTTensor, max_entries: int = 10**7) -> np.ndarray:
    total = int(np.prod(tt.shape))
    if total > max_entries:
        raise MemoryError(f"full tensor has {total} entries")
    M = np.ones((1, 1))
    for G in tt.cores:
        r0, m, r1 = G.shape
        # M is (N, r0) with little-endian rows; new rows (n + N i)
        M = np.einsum("na,aib->nib", M, G).reshape(-1, r1, order="F")
    return M[:, 0].reshape(tt.shape, order="F")


def tt_from_full(A, eps: float = 1e-14, r_max: int | None = None) -> TTTensor:
    """TT-SVD of a dense array (test helper)."""
    A = np.asarray(A, float)
    shape = A.shape
    q = len(shape)
    delta = eps / np.sqrt(max(q - 1, 1)) * np.linalg.norm(A)
    cores = []
    r = 1
    C = A.reshape(-1, order="F")
    for k in range(q - 1):
        C = C.reshape(r * shape[k], -1, order="F")
        U, s, Vt = np.linalg.svd(C, full_matrices=False)
        rk = _trunc_rank(s, delta, r_max)
        cores.append(U[:, :rk].reshape(r, shape[k], rk, order="F"))
        C = s[:rk, None] * Vt[:rk]
        r = rk
    cores.append(C.reshape(r, shape[-1], 1, order="F"))
    return TTTensor(cores)


def _trunc_rank(s, delta, r_max=None) -> int:
    # smallest rank with tail energy <= delta
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    rk = int(np.sum(tail > delta))
    rk = max(rk, 1)
    if r_max is not None:
        rk = min(rk, r_max)
    return rk


def tt_norm(tt: TTTensor) -> float:
    W = np.ones((1, 1))
    for G in tt.cores:
        W = np.einsum("ab,aic,bid->cd", W, G, G)
    return float(np.sqrt(max(W[0, 0], 0.0)))


def tt_rounding(tt: TTTensor, eps: float, r_max: int | None = None) -> TTTensor:
    """Recompress to relative Frobenius accuracy eps (QR right-to-left, SVD left-to-right)."""
    cores = [G.copy() for G in tt.cores]
    q = len(cores)
    if q == 1:
        return TTTensor(cores, dict(tt.info))
    for k in range(q - 1, 0, -1):
        r0, m, r1 = cores[k].shape
        Q, R = np.linalg.qr(unfold_left(cores[k]).T)
        rn = Q.shape[1]
        cores[k] = Q.T.reshape(rn, m, r1, order="F")
        cores[k - 1] = np.einsum("aib,cb->aic", cores[k - 1], R)
    nrm = np.linalg.norm(cores[0])
    delta = eps / np.sqrt(q - 1) * nrm
    for k in range(q - 1):
        r0, m, r1 = cores[k].shape
        U, s, Vt = np.linalg.svd(unfold_right(cores[k]), full_matrices=False)
        rk = _trunc_rank(s, delta, r_max)
        cores[k] = U[:, :rk].reshape(r0, m, rk, order="F")
        cores[k + 1] = np.einsum("ab,bic->aic", s[:rk, None] * Vt[:rk], cores[k + 1])
    return TTTensor(cores, dict(tt.info))


class EntryOracle:
    """Callable returning tensor entries for an (N, q) integer index array.

    Counts the number of entries it was asked for.
    """

    def __init__(self, fn, shape):
        self.fn = fn
        self.shape = tuple(int(m) for m in shape)
        self.n_evals = 0

    def __call__(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        self.n_evals += idx.shape[0]
        return np.asarray(self.fn(idx), dtype=float)


class _Reversed:
    def __init__(self, oracle):
        self.o = oracle
        self.shape = oracle.shape[::-1]

    def __call__(self, idx):
        return self.o(np.asarray(idx)[:, ::-1])


class _Memo:
    """Oracle wrapper that evaluates every distinct entry at most once."""

    def __init__(self, oracle, shape):
        self.o = oracle
        self.shape = tuple(shape)
        self.strides = np.cumprod((1,) + self.shape[:-1]).astype(np.int64)
        self.known = {}
        self.hits = 0

    def __call__(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        keys = (idx @ self.strides).tolist()
        # missing keys come back as nan; oracle values are assumed finite
        vals = np.fromiter(map(self.known.get, keys, repeat(np.nan)), float, len(keys))
        miss = np.flatnonzero(np.isnan(vals))
        self.hits += len(keys)
        if miss.size:
            fm = np.asarray(keys)[miss]
            fk, first, inv = np.unique(fm, return_index=True, return_inverse=True)
            self.hits -= fk.size
            new = np.asarray(self.o(idx[miss[first]]), float)
            vals[miss] = new[inv.ravel()]
            self.known.update(zip(fk.tolist(), new.tolist()))
        return vals


def _sweep(oracle, shape, I, J, eps, r_max, rng, kick=0):
    """One left-to-right cross sweep over the supercores. Updates I, J in place.

    kick > 0 adds that many random right multi-indices to each supercore.
    """
    q = len(shape)
    cores = [None] * q
    capped = False
    ratios = []
    for k in range(1, q):
        Il, Jr = I[k - 1], J[k + 1]
        if kick and k < q - 1:
            extra = np.stack([rng.integers(0, m, kick) for m in shape[k + 1:]], axis=1)
            Jr = np.unique(np.vstack([Jr, extra]), axis=0)
        R, B = Il.shape[0], Jr.shape[0]
        m0, m1 = shape[k - 1], shape[k]
        nrows, ncols = R * m0, m1 * B
        ra = np.arange(nrows)
        ca = np.arange(ncols)
        rows_left = np.empty((nrows, k), dtype=np.intp)
        rows_left[:, : k - 1] = Il[ra % R]
        rows_left[:, k - 1] = ra // R
        cols_right = np.empty((ncols, q - k), dtype=np.intp)
        cols_right[:, 0] = ca % m1
        cols_right[:, 1:] = Jr[ca // m1]
        rbuf = np.empty((ncols, q), dtype=np.intp)
        rbuf[:, k:] = cols_right
        cbuf = np.empty((nrows, q), dtype=np.intp)
        cbuf[:, :k] = rows_left

        def get_row(i):
            rbuf[:, :k] = rows_left[i]
            return oracle(rbuf)

        def get_col(j):
            cbuf[:, k:] = cols_right[j]
            return oracle(cbuf)

        res = aca(get_row, get_col, (nrows, ncols), eps, r_max, start_row=0, rng=rng)
        if res.rank == 0:
            return None, capped, ratios
        ratios.append(res.last_ratio)
        if not res.converged:
            capped = True
        P = np.asarray(res.rows)
        Q = np.asarray(res.cols)
        rk = res.rank
        C = solve_triangular(res.U[P].T, res.U.T, lower=False, unit_diagonal=True,
                             check_finite=False).T
        cores[k - 1] = C.reshape(R, m0, rk, order="F")
        I[k] = rows_left[P]
        J[k] = cols_right[Q]
        if k == q - 1:
            # pivot rows of the supercore are reproduced exactly by U V
            cores[k] = (res.U[P] @ res.V).reshape(rk, m1, 1, order="F")
    return cores, capped, ratios


def _zero_tt(shape, sweeps):
    return TTTensor([np.zeros((1, m, 1)) for m in shape],
                    {"sweeps": sweeps, "capped": False, "err_est": 0.0, "aca_ratios": []})


def tt_cross(oracle, shape=None, eps: float = 1e-6, r_max: int = 120, seed: int = 0,
             min_sweeps: int = 2, max_sweeps: int = 10, n_check: int = 1000,
             round_result: bool = True, aca_factor: float = 1.0,
             tighten: float = 0.1, kick: int = 3, memo: bool = False) -> TTTensor:
    """Approximate a tensor given only by an entry oracle.

    Sweeps alternate direction, each running partially pivoted ACA on every
    supercore. After min_sweeps the result is checked against the oracle on
    n_check random entries (relative max-norm); further sweeps with a tighter
    ACA tolerance run until that estimate is <= eps. The result is then
    rounded with the loosest Frobenius tolerance that keeps the estimate <= eps.
    Sweeping also stops when a sweep at the rank cap fails to halve the best
    estimate so far.
    With memo=True repeated entries are served from a cache instead of the oracle.
    """
    shape = tuple(int(m) for m in (oracle.shape if shape is None else shape))
    q = len(shape)
    if q < 1:
        raise ValueError("empty shape")
    if any(m < 1 for m in shape):
        raise ValueError("zero-size mode")
    if not (eps > 0):
        raise ValueError("eps must be positive")
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    rng = np.random.default_rng(seed)
    if q == 1:
        vals = oracle(np.arange(shape[0])[:, None])
        return TTTensor([vals.reshape(1, -1, 1)],
                        {"sweeps": 0, "capped": False, "err_est": 0.0, "aca_ratios": []})
    min_sweeps = min(min_sweeps, max_sweeps) if q > 2 else 1
    if memo:
        oracle = _Memo(oracle, shape)
    total = float(np.prod(shape, dtype=float))

    i0 = np.array([rng.integers(0, m) for m in shape], dtype=np.intp)
    I = [i0[:k][None, :] for k in range(q + 1)]
    J = [i0[k:][None, :] for k in range(q + 1)]

    if total <= n_check:
        chk = np.array(np.unravel_index(np.arange(int(total)), shape, order="F")).T
    else:
        chk = np.stack([rng.integers(0, m, n_check) for m in shape], axis=1)
    chk_vals = None
    scale = 1.0

    tol = eps * aca_factor
    fwd = True
    best = None
    capped = False
    hit_cap = False
    history = []
    for sweep in range(1, max_sweeps + 1):
        if fwd:
            cores, capped, ratios = _sweep(oracle, shape, I, J, tol, r_max, rng, kick)
            if cores is None:
                return _zero_tt(shape, sweep)
            tt = TTTensor(cores)
        else:
            Ir = [J[q - k][:, ::-1] for k in range(q + 1)]
            Jr = [I[q - k][:, ::-1] for k in range(q + 1)]
            cores, capped, ratios = _sweep(_Reversed(oracle), shape[::-1], Ir, Jr, tol, r_max, rng, kick)
            if cores is None:
                return _zero_tt(shape, sweep)
            for k in range(q + 1):
                I[k] = Jr[q - k][:, ::-1]
                J[k] = Ir[q - k][:, ::-1]
            tt = TTTensor(cores).reversed()
        fwd = not fwd
        hit_cap |= capped
        if sweep < min_sweeps:
            continue
        if chk_vals is None:
            chk_vals = oracle(chk)
            scale = max(float(np.max(np.abs(chk_vals))), 1e-300)
        err = float(np.max(np.abs(tt_entries(tt, chk) - chk_vals))) / scale
        history.append((sweep, err, max(tt.ranks)))
        # at the rank cap, more sweeps rarely help once progress stalls
        stalled = capped and best is not None and err > 0.5 * best[1]
        if best is None or err < best[1]:
            best = (tt, err, sweep, ratios)
        if err <= eps or stalled:
            break
        tol *= tighten
    tt, err, n_sw, ratios = best
    max_rank_cross = max(tt.ranks)
    if round_result:
        target = max(eps, err)
        f = eps
        for _ in range(5):
            rt = tt_rounding(tt, f)
            rerr = float(np.max(np.abs(tt_entries(rt, chk) - chk_vals))) / scale
            if rerr <= target:
                tt, err = rt, rerr
                break
            f *= 0.1
    # the cap only matters if it kept the result above tolerance
    capped = hit_cap and err > eps
    if capped:
        warnings.warn("tt_cross hit the rank cap before reaching the tolerance", RuntimeWarning)
    tt.info = {"sweeps": sweep, "best_sweep": n_sw, "capped": capped, "err_est": err,
               "aca_ratios": ratios, "max_rank_cross": max_rank_cross,
               "history": history, "memo_hits": getattr(oracle, "hits", 0)}
    return tt
