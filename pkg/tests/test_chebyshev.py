import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phmat.chebyshev import (chebyshev_grid, cluster_basis, cluster_basis_factors, face_split,
                             fast_kron, fast_kron_flops, kron_chain, lagrange_values, transfer_factors)
from phmat.geometry import build_cluster_tree


def lagrange_oracle(nodes, x):
    # textbook product formula
    p = len(nodes)
    L = np.ones((len(x), p))
    for j in range(p):
        for k in range(p):
            if k != j:
                L[:, j] *= (x - nodes[k]) / (nodes[j] - nodes[k])
    return L


@pytest.mark.parametrize("p", [1, 2, 5, 8, 15, 27])
def test_nodes_first_kind_ascending(p):
    g = chebyshev_grid(-1.0, 1.0, p)
    k = np.arange(1, p + 1)
    expected = np.sort(np.cos((2 * k - 1) * np.pi / (2 * p)))
    assert np.allclose(g.nodes, expected, atol=1e-15)
    assert np.all(np.diff(g.nodes) > 0)
    g2 = chebyshev_grid(0.25, 1.0, p)
    assert np.all((g2.nodes > 0.25) & (g2.nodes < 1.0))


@pytest.mark.parametrize("p", [2, 5, 8, 15])
def test_lagrange_against_product_formula(p):
    g = chebyshev_grid(0.2, 0.7, p)
    x = np.random.default_rng(p).uniform(0.2, 0.7, 40)
    assert np.allclose(lagrange_values(g, x), lagrange_oracle(g.nodes, x), atol=1e-11)


def test_cardinality_and_partition_of_unity():
    g = chebyshev_grid(0.0, 0.5, 9)
    assert np.array_equal(lagrange_values(g, g.nodes), np.eye(9))
    x = np.linspace(0, 0.5, 101)
    assert np.allclose(lagrange_values(g, x).sum(axis=1), 1.0, atol=1e-13)


def test_polynomial_reproduction():
    p = 7
    g = chebyshev_grid(-0.3, 1.3, p)
    coef = np.random.default_rng(0).standard_normal(p)
    x = np.linspace(-0.3, 1.3, 57)
    vals = np.polyval(coef, g.nodes)
    assert np.allclose(lagrange_values(g, x) @ vals, np.polyval(coef, x), atol=1e-11)


def test_degenerate_interval():
    g = chebyshev_grid(0.4, 0.4, 3)
    L = lagrange_values(g, np.array([0.4]))
    assert np.all(np.isfinite(L)) and L.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        chebyshev_grid(1.0, 0.0, 3)


def test_face_split_rows_are_kron():
    rng = np.random.default_rng(0)
    A, B = rng.random((4, 3)), rng.random((4, 5))
    F = face_split(A, B)
    for i in range(4):
        assert np.allclose(F[i], np.kron(A[i], B[i]))


def all_kron_shapes(limit=4096):
    # factor counts 1..3, each side 1..6, product of input and output dims bounded
    sizes = range(1, 7)
    for k in (1, 2, 3):
        for dims in itertools.product(sizes, repeat=2 * k):
            ms, qs = dims[:k], dims[k:]
            if np.prod(ms) * np.prod(qs) <= limit:
                yield list(zip(ms, qs))


def test_fast_kron_all_small_shapes():
    rng = np.random.default_rng(0)
    worst = 0.0
    count = 0
    for shapes in all_kron_shapes():
        facs = [rng.standard_normal(s) for s in shapes]
        x = rng.standard_normal(int(np.prod([q for _, q in shapes])))
        y = fast_kron(facs, x)
        ref = kron_chain(facs) @ x
        worst = max(worst, np.max(np.abs(y - ref)) / max(1.0, np.max(np.abs(ref))))
        count += 1
    assert count > 1000
    assert worst <= 1e-13


def test_fast_kron_matrix_input_and_flops():
    rng = np.random.default_rng(1)
    facs = [rng.standard_normal((3, 4)), rng.standard_normal((2, 5))]
    X = rng.standard_normal((20, 3))
    assert np.allclose(fast_kron(facs, X), kron_chain(facs) @ X)
    # first mode: 3*4 * 5, second: 2*5 * 3 (multiply-adds doubled)
    assert fast_kron_flops([(3, 4), (2, 5)]) == 2 * (3 * 4 * 5 + 2 * 5 * 3)


def test_cluster_basis_column_order():
    rng = np.random.default_rng(2)
    pts = rng.random((6, 3))
    U = cluster_basis_factors(pts, np.zeros(3), np.ones(3), 4)
    B = cluster_basis(U)
    grids = [chebyshev_grid(0, 1, 4).nodes] * 3
    for a in range(6):
        for j1, j2, j3 in itertools.product(range(4), repeat=3):
            col = j1 + 4 * j2 + 16 * j3
            assert B[a, col] == pytest.approx(U[0][a, j1] * U[1][a, j2] * U[2][a, j3])
    assert B.shape == (6, 64)


def nested_residual(X, l_max, p):
    t = build_cluster_tree(X, l_max)
    worst = 0.0
    for v in t.nodes:
        for c in v.children:
            if c.size == 0:
                continue
            Up = cluster_basis(cluster_basis_factors(X[c.idx], v.box.lo, v.box.hi, p))
            Uc = cluster_basis(cluster_basis_factors(X[c.idx], c.box.lo, c.box.hi, p))
            E = kron_chain(transfer_factors(v.box.lo, v.box.hi, c.box.lo, c.box.hi, p))
            worst = max(worst, np.max(np.abs(Up - Uc @ E)))
    return worst


@settings(max_examples=10, deadline=None)
@given(d=st.integers(1, 3), p=st.sampled_from([3, 5, 8]), seed=st.integers(0, 10**6))
def test_nestedness_property(d, p, seed):
    X = np.random.default_rng(seed).random((60, d))
    assert nested_residual(X, 2 if d < 3 else 1, p) <= 1e-12
