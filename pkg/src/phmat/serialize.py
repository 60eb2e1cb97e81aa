"""Versioned binary container for offline artifacts.

Layout: magic, u32 version, u64 header length, JSON header (config, grids,
tree topology, block lists, array table), then the arrays back to back as
little-endian float64 (int64 for index arrays).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .farfield import theta_grids
from .geometry import BlockTree, Box, ClusterNode, ClusterTree
from .kernels import KernelSpec
from .phmatrix import ParametricMatrix, PHConfig
from .tt import TTTensor

MAGIC = b"PHMAT\x00\x01\x00"
VERSION = 1


class _Writer:
    def __init__(self):
        self.table = []
        self.chunks = []

    def add(self, arr, kind="f8"):
        a = np.ascontiguousarray(arr, dtype="<" + kind)
        self.table.append([kind, list(a.shape)])
        self.chunks.append(a.tobytes())
        return len(self.table) - 1


def save(pm: ParametricMatrix, path) -> None:
    w = _Writer()
    nodes = []
    for v in pm.tree.nodes:
        nodes.append({
            "id": v.id, "level": v.level,
            "parent": -1 if v.parent is None else v.parent.id,
            "children": [c.id for c in v.children],
            "lo": v.box.lo.tolist(), "hi": v.box.hi.tolist(),
            "idx": w.add(v.idx, "i8"),
        })
    hdr = {
        "version": VERSION,
        "fmt": pm.fmt,
        "spec": {"name": pm.spec.name, "lo": list(pm.spec.lo), "hi": list(pm.spec.hi)},
        "cfg": asdict(pm.cfg),
        "grids": [g.nodes.tolist() for g in pm.grids],
        "n": pm.n, "d": pm.d, "l_max": pm.tree.l_max,
        "points": w.add(pm.points),
        "nodes": nodes,
        "far": [[s.id, t.id] for s, t in pm.blocks.far],
        "near": [[s.id, t.id] for s, t in pm.blocks.near],
        "c_sp": pm.blocks.c_sp, "n_blocks": pm.blocks.n_blocks,
        "far_tt": list(map(int, pm.far_tt)),
        "keys": [[k[0], list(k[1])] for k in pm.keys],
        "couplings": [[w.add(G) for G in c.cores] for c in pm.couplings],
        "S": [w.add(S) for S in pm.S],
        "T": [w.add(T) for T in pm.T],
        "near_tt": [{"cores": [w.add(G) for G in tt.cores], "shape2": list(tt.info["shape2"])}
                    for tt in pm.near],
        "leaf_factors": {str(k): [w.add(F) for F in U] for k, U in pm.leaf_factors.items()},
        "transfers": {str(k): [w.add(E) for E in Es] for k, Es in pm.transfers.items()},
        "stats": {k: float(v) for k, v in pm.stats.items()},
    }
    hdr["arrays"] = w.table
    raw = json.dumps(hdr).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for c in w.chunks:
            fh.write(c)


def load(path) -> ParametricMatrix:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError("not a phmat artifact")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValueError(f"unsupported artifact version {version}")
        hdr = json.loads(fh.read(hlen).decode())
        arrays = []
        for kind, shape in hdr["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            a = np.frombuffer(fh.read(8 * count), dtype="<" + kind).reshape(shape)
            arrays.append(a.astype(np.float64 if kind == "f8" else np.intp))
    get = arrays.__getitem__
    spec = KernelSpec(hdr["spec"]["name"], tuple(hdr["spec"]["lo"]), tuple(hdr["spec"]["hi"]))
    cfg = PHConfig(**hdr["cfg"])
    nodes = []
    for rec in hdr["nodes"]:
        nodes.append(ClusterNode(get(rec["idx"]), Box(np.array(rec["lo"]), np.array(rec["hi"])),
                                 rec["level"], rec["id"]))
    for rec, v in zip(hdr["nodes"], nodes):
        v.parent = None if rec["parent"] < 0 else nodes[rec["parent"]]
        v.children = [nodes[c] for c in rec["children"]]
    tree = ClusterTree(nodes[0], nodes, hdr["l_max"], hdr["n"], hdr["d"])
    blocks = BlockTree([(nodes[a], nodes[b]) for a, b in hdr["far"]],
                       [(nodes[a], nodes[b]) for a, b in hdr["near"]], hdr["c_sp"], hdr["n_blocks"])
    grids = theta_grids(spec, cfg.p_theta)
    for g, stored in zip(grids, hdr["grids"]):
        if not np.array_equal(g.nodes, np.array(stored)):
            raise ValueError("parameter grid mismatch")
    keys = [(k[0], tuple(k[1])) for k in hdr["keys"]]
    couplings = [TTTensor([get(i) for i in c]) for c in hdr["couplings"]]
    pm = ParametricMatrix(hdr["fmt"], spec, cfg, get(hdr["points"]), tree, blocks, grids,
                          hdr["far_tt"], couplings, keys)
    pm.S = [get(i) for i in hdr["S"]]
    pm.T = [get(i) for i in hdr["T"]]
    pm.near = [TTTensor([get(i) for i in rec["cores"]], {"shape2": tuple(rec["shape2"])})
               for rec in hdr["near_tt"]]
    pm.leaf_factors = {int(k): [get(i) for i in U] for k, U in hdr["leaf_factors"].items()}
    pm.transfers = {int(k): [get(i) for i in Es] for k, Es in hdr["transfers"].items()}
    pm.stats = hdr["stats"]
    return pm
