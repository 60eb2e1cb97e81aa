import numpy as np
import pytest

from phmat import KernelEvalCounter, make_kernel
from phmat.baselines import aca_partial, h2_hca, h_aca
from phmat.kernels import CountedKernel


def dense_entry(A):
    return lambda i, j: A[i, j]


def test_aca_rank_one_exact():
    rng = np.random.default_rng(0)
    A = np.outer(rng.random(30) + 0.1, rng.random(20) + 0.1)
    F = aca_partial(dense_entry(A), A.shape, 1e-10)
    assert F.rank == 1
    assert np.allclose(F.dense(), A, rtol=1e-14, atol=1e-15)


def test_aca_zero_matrix():
    F = aca_partial(dense_entry(np.zeros((7, 9))), (7, 9), 1e-8)
    assert F.rank == 0 and F.V.shape == (7, 0) and F.Y.shape == (9, 0)
    assert np.all(F.dense() == 0)


def test_aca_se_admissible_block():
    rng = np.random.default_rng(1)
    Xs = rng.random((80, 3)) * 0.25
    Xt = rng.random((70, 3)) * 0.25 + np.array([0.5, 0.25, 0.0])
    spec = make_kernel("se")
    K = CountedKernel(spec).matrix(Xs, Xt, [0.5])
    k = CountedKernel(spec)
    F = aca_partial(lambda i, j: k(Xs[i], Xt[j], [0.5]), K.shape, 1e-6)
    assert F.converged and F.rank <= min(K.shape)
    assert np.max(np.abs(F.dense() - K)) <= 1e-5


def test_aca_cap_and_errors():
    A = np.random.default_rng(2).random((10, 10))
    F = aca_partial(dense_entry(A), A.shape, 1e-12, r_max=2)
    assert F.rank == 2 and not F.converged
    with pytest.raises(ValueError):
        aca_partial(dense_entry(A), A.shape, 0.0)


@pytest.fixture(scope="module")
def pts512():
    return np.random.default_rng(3).random((512, 2))


def test_h_aca_mvm_and_evals(pts512):
    spec = make_kernel("se")
    eps = 1e-5
    c = KernelEvalCounter()
    M = h_aca(pts512, spec, [0.4], l_max=3, eps=eps, counter=c)
    assert len(M.blocks.far) > 0
    K = CountedKernel(spec).matrix(pts512, pts512, [0.4])
    x = np.random.default_rng(4).standard_normal(512)
    assert np.linalg.norm(M.matvec(x) - K @ x) <= 10 * eps * np.linalg.norm(K @ x)
    near = sum(s.size * t.size for s, t in M.blocks.near)
    assert c.get("online") >= near
    m = M.metrics()
    assert m["nf_entries"] == near and m["far_blocks"] == len(M.far)
    assert np.allclose(M.to_dense() @ x, M.matvec(x))


def test_h2_hca_mvm_shapes_and_ratio(pts512):
    spec = make_kernel("e")
    eps = 1e-5
    p = 10
    M = h2_hca(pts512, spec, [0.6], l_max=3, p_s=p, eps=eps)
    for F in M.couplings:
        assert F.V.shape[0] == p**2 and F.Y.shape[0] == p**2
    K = CountedKernel(spec).matrix(pts512, pts512, [0.6])
    x = np.random.default_rng(5).standard_normal(512)
    assert np.linalg.norm(M.matvec(x) - K @ x) <= 10 * eps * np.linalg.norm(K @ x)
    m = M.metrics()
    expect = 2 * sum(p**2 * M.couplings[k].rank for k in M.far_key) / 512**2
    assert m["ff_ratio"] == pytest.approx(expect)
    assert m["unique_couplings"] == len(M.couplings) < len(M.blocks.far)


def test_h2_hca_cache_transparent(pts512):
    spec = make_kernel("mc")
    c1, c2 = KernelEvalCounter(), KernelEvalCounter()
    a = h2_hca(pts512, spec, [0.5], l_max=3, p_s=6, eps=1e-6, counter=c1)
    b = h2_hca(pts512, spec, [0.5], l_max=3, p_s=6, eps=1e-6, counter=c2, use_cache=False)
    x = np.random.default_rng(6).standard_normal(512)
    assert np.array_equal(a.matvec(x), b.matvec(x))
    assert c2.total > c1.total


@pytest.mark.slow
def test_h_aca_mc_rank_single_digits():
    X = np.random.default_rng(7).random((4096, 3))
    M = h_aca(X, make_kernel("mc"), [0.625], l_max=2, eps=1e-5)
    assert M.metrics()["rank"] < 10
