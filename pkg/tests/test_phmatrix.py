import dataclasses

import numpy as np
import pytest

from phmat import (DomainError, KernelEvalCounter, PHConfig, make_kernel, metrics, mvm_h, mvm_h2, offline,
                   online, to_format)
from phmat.kernels import CountedKernel
from phmat.phmatrix import backward_transform, forward_transform
from phmat.serialize import load, save

CFG = PHConfig(l_max=3, p_s=8, p_theta=10, eps=1e-6)


@pytest.fixture(scope="module")
def points():
    return np.random.default_rng(0).random((700, 2))


@pytest.fixture(scope="module")
def built(points):
    spec = make_kernel("mn")
    c = KernelEvalCounter()
    pm = offline(points, spec, CFG, "h", counter=c)
    return pm, c


def exact(spec, X, th):
    return CountedKernel(spec).matrix(X, X, th)


@pytest.mark.parametrize("fmt", ["h", "h2"])
@pytest.mark.parametrize("name", ["e", "se", "mc", "tps"])
def test_dense_equivalence_d2(points, name, fmt):
    spec = make_kernel(name)
    # tps has a singularity at lambda = 0, so its parameter interpolant converges slower
    cfg = dataclasses.replace(CFG, p_theta=20) if name == "tps" else CFG
    pm = offline(points, spec, cfg, fmt)
    rng = np.random.default_rng(1)
    for _ in range(2):
        th = spec.box[0] + (spec.box[1] - spec.box[0]) * rng.random(spec.d_theta)
        K = exact(spec, points, th)
        A = online(pm, th).to_dense()
        assert np.linalg.norm(A - K) <= 1e-4 * np.linalg.norm(K)


def test_internal_level_far_blocks_use_transfers(built, points):
    pm, _ = built
    assert {s.level for s, t in pm.blocks.far} == {2, 3}
    pm2 = to_format(pm, "h2")
    th = [0.4, 1.1]
    x = np.random.default_rng(2).standard_normal(pm.n)
    y1, y2 = online(pm, th).matvec(x), online(pm2, th).matvec(x)
    assert np.linalg.norm(y1 - y2) <= 1e-10 * np.linalg.norm(y1)
    K = exact(pm.spec, points, th)
    assert np.linalg.norm(y2 - K @ x) <= 1e-4 * np.linalg.norm(K @ x)


def test_mvm_matches_dense(built):
    pm, _ = built
    inst = online(pm, [0.7, 2.5])
    x = np.random.default_rng(3).standard_normal(pm.n)
    assert np.allclose(inst.matvec(x), inst.to_dense() @ x, rtol=1e-12, atol=1e-12)
    inst2 = online(to_format(pm, "h2"), [0.7, 2.5])
    assert np.allclose(inst2.to_dense(), inst.to_dense(), rtol=0, atol=1e-11)


def test_online_and_mvm_need_no_kernel_evals(built):
    pm, c = built
    before = dict(c.by_stage)
    pm2 = to_format(pm, "h2")
    for p in (pm, pm2):
        inst = online(p, [0.3, 0.9], counter=c)
        inst.matvec(np.ones(p.n))
    assert dict(c.by_stage) == before
    assert c.get("offline_far") > 0 and c.get("offline_near") > 0


def test_direct_near_mode_counts_online_evals(points):
    spec = make_kernel("e")
    cfg = dataclasses.replace(CFG, near_mode="direct")
    c = KernelEvalCounter()
    pm = offline(points, spec, cfg, "h", counter=c)
    assert pm.near == [] and c.get("offline_near") == 0
    online(pm, [0.5], counter=c)
    assert c.get("online") == sum(s.size * t.size for s, t in pm.blocks.near)
    ref = offline(points, spec, CFG, "h")
    x = np.random.default_rng(4).standard_normal(pm.n)
    a, b = online(pm, [0.5]).matvec(x), online(ref, [0.5]).matvec(x)
    assert np.linalg.norm(a - b) <= 1e-5 * np.linalg.norm(b)


def test_cache_is_transparent(points):
    spec = make_kernel("e")
    cfg = PHConfig(l_max=3, p_s=5, p_theta=6, eps=1e-5, near_mode="direct")
    c1, c2 = KernelEvalCounter(), KernelEvalCounter()
    on = offline(points, spec, cfg, "h", counter=c1)
    off = offline(points, spec, dataclasses.replace(cfg, use_cache=False), "h", counter=c2)
    assert len(off.couplings) == len(on.blocks.far) > len(on.couplings)
    A, B = online(on, [0.6]).to_dense(), online(off, [0.6]).to_dense()
    assert np.array_equal(A, B)
    assert c2.get("offline_far") > c1.get("offline_far")


def test_to_format_matches_direct_build(points):
    spec = make_kernel("se")
    pm_h = offline(points, spec, CFG, "h")
    pm_h2 = offline(points, spec, CFG, "h2")
    conv = to_format(pm_h, "h2")
    assert all(np.array_equal(a, b) for c1, c2 in zip(conv.couplings, pm_h2.couplings)
               for a, b in zip(c1.cores, c2.cores))
    x = np.random.default_rng(5).standard_normal(pm_h.n)
    assert np.array_equal(online(conv, [0.5]).matvec(x), online(pm_h2, [0.5]).matvec(x))
    back = to_format(pm_h2, "h")
    assert all(np.array_equal(a, b) for a, b in zip(back.S, pm_h.S))
    with pytest.raises(ValueError):
        to_format(pm_h, "dense")


def test_h_h2_consistency(built):
    pm, _ = built
    pm2 = to_format(pm, "h2")
    rng = np.random.default_rng(6)
    x = rng.standard_normal(pm.n)
    for th in ([0.25, 0.5], [1.0, 3.0], [0.61, 1.7]):
        a = mvm_h(online(pm, th), x)
        b = mvm_h2(online(pm2, th), x)
        assert np.linalg.norm(a - b) <= 2e-4 * np.linalg.norm(a)


def test_transforms_equal_dense_bases(built, points):
    from phmat.chebyshev import cluster_basis, cluster_basis_factors
    pm2 = to_format(built[0], "h2")
    x = np.random.default_rng(7).standard_normal(pm2.n)
    xh = forward_transform(pm2, x)
    for v in pm2.tree.nodes:
        if v.size == 0:
            continue
        U = cluster_basis(cluster_basis_factors(points[v.idx], v.box.lo, v.box.hi, CFG.p_s))
        assert np.allclose(xh[v.id], U.T @ x[v.idx], atol=1e-10)
    yh = {v.id: np.ones(CFG.p_s**2) for v in pm2.tree.at_level(2) if v.size}
    y = backward_transform(pm2, dict(yh))
    ref = np.zeros(pm2.n)
    for v in pm2.tree.at_level(2):
        if v.size:
            U = cluster_basis(cluster_basis_factors(points[v.idx], v.box.lo, v.box.hi, CFG.p_s))
            ref[v.idx] += U @ yh[v.id]
    assert np.allclose(y, ref, atol=1e-10)


def test_errors(built):
    pm, _ = built
    with pytest.raises(DomainError):
        online(pm, [0.1, 1.0])
    with pytest.raises(DomainError):
        online(pm, [0.5, 3.5])
    with pytest.raises(ValueError):
        online(pm, [0.5])
    inst = online(pm, [0.5, 1.0])
    with pytest.raises(ValueError):
        inst.matvec(np.ones(pm.n + 1))
    with pytest.raises(ValueError):
        mvm_h2(inst, np.ones(pm.n))
    with pytest.raises(ValueError):
        offline(np.zeros((5, 2)), pm.spec, pm.cfg, "dense")
    for bad in (dict(l_max=-1), dict(p_s=0), dict(eps=0.0), dict(eta=-1.0), dict(near_mode="x")):
        with pytest.raises(ValueError):
            dataclasses.replace(CFG, **bad).validate()


def test_metrics(built):
    pm, _ = built
    m = metrics(pm)
    nf = sum(s.size * t.size for s, t in pm.blocks.near)
    assert m["nf_entries"] == nf and m["nf_ratio"] == nf / pm.n**2
    assert m["far_blocks"] + m["near_blocks"] == len(pm.blocks.far) + len(pm.blocks.near)
    assert m["unique_couplings"] == len(pm.couplings) == len(set(pm.keys))
    d, dth = 2, 2
    ranks = [max(c.ranks[d], c.ranks[d + dth]) for c in pm.couplings]
    assert m["rank"] == pytest.approx(np.mean(ranks))
    ff = sum(s.size * pm.S[b].shape[1] + t.size * pm.T[b].shape[1] + pm.S[b].shape[1] * pm.T[b].shape[1]
             for b, (s, t) in enumerate(pm.blocks.far))
    assert m["ff_entries"] == ff
    m2 = metrics(to_format(pm, "h2"))
    assert m2["basis_entries"] > 0 and m2["nf_ratio"] == m["nf_ratio"]


def test_serialization_round_trip(built, tmp_path):
    pm, _ = built
    for p in (pm, to_format(pm, "h2")):
        path = tmp_path / f"m_{p.fmt}.phm"
        save(p, path)
        q = load(path)
        assert q.fmt == p.fmt and q.n == p.n and q.cfg == p.cfg
        x = np.random.default_rng(8).standard_normal(p.n)
        assert np.array_equal(online(q, [0.4, 2.0]).matvec(x), online(p, [0.4, 2.0]).matvec(x))
    bad = tmp_path / "bad.phm"
    bad.write_bytes(b"not an artifact")
    with pytest.raises(ValueError):
        load(bad)
