"""Uniform 2^d cluster tree, admissibility, and block cluster tree."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def side(self):
        return self.hi - self.lo

    def diam(self) -> float:
        return float(np.sqrt(np.sum((self.hi - self.lo) ** 2)))


def box_diam(b: Box) -> float:
    return b.diam()


def box_dist(a: Box, b: Box) -> float:
    gap = np.maximum(0.0, np.maximum(a.lo - b.hi, b.lo - a.hi))
    return float(np.sqrt(np.sum(gap**2)))


@dataclass(eq=False)
class ClusterNode:
    idx: np.ndarray
    box: Box
    level: int
    id: int = -1
    parent: "ClusterNode | None" = None
    children: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.idx)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __repr__(self):
        return f"ClusterNode(id={self.id}, level={self.level}, n={self.size})"


@dataclass
class ClusterTree:
    root: ClusterNode
    nodes: list
    l_max: int
    n: int
    d: int

    def leaves(self):
        return [v for v in self.nodes if v.is_leaf]

    def at_level(self, l):
        return [v for v in self.nodes if v.level == l]

    @property
    def c_leaf(self) -> float:
        return self.n / 2 ** (self.d * self.l_max)


def build_cluster_tree(points, l_max: int, root_box: Box | None = None) -> ClusterTree:
    """Split every node at its midpoint in all d directions until level l_max.

    Children are kept even when empty. A coordinate equal to the midpoint goes
    to the lower child. Child order is little-endian in the dimension bits.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite point coordinates")
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    n, d = X.shape
    if root_box is None:
        root_box = Box(np.zeros(d), np.ones(d))
    lo, hi = np.asarray(root_box.lo, float), np.asarray(root_box.hi, float)
    if np.any(X < lo) or np.any(X > hi):
        raise ValueError("points outside the root box")
    root = ClusterNode(np.arange(n), Box(lo.copy(), hi.copy()), 0)
    nodes = []
    stack = [root]
    while stack:
        v = stack.pop()
        v.id = len(nodes)
        nodes.append(v)
        if v.level >= l_max:
            continue
        mid = 0.5 * (v.box.lo + v.box.hi)
        upper = X[v.idx] > mid  # (n_v, d)
        code = upper @ (1 << np.arange(d))
        kids = []
        for c in range(2**d):
            bits = (c >> np.arange(d)) & 1
            clo = np.where(bits, mid, v.box.lo)
            chi = np.where(bits, v.box.hi, mid)
            kids.append(ClusterNode(v.idx[code == c], Box(clo, chi), v.level + 1, parent=v))
        v.children = kids
        stack.extend(reversed(kids))
    tree = ClusterTree(root, nodes, l_max, n, d)
    big = max(v.size for v in tree.leaves())
    if big > 4 * tree.c_leaf:
        warnings.warn(f"largest leaf holds {big} points, more than 4x the mean {tree.c_leaf:.1f}")
    return tree


def admissible(a: ClusterNode, b: ClusterNode, eta: float) -> bool:
    return max(a.box.diam(), b.box.diam()) <= eta * box_dist(a.box, b.box)


@dataclass
class BlockTree:
    far: list  # list of (row node, col node)
    near: list
    c_sp: int
    n_blocks: int


def build_block_tree(tree: ClusterTree, eta: float | None = None) -> BlockTree:
    """Recursive admissible partition of root x root.

    Blocks with an empty side are dropped (they carry no entries).
    """
    if eta is None:
        eta = float(np.sqrt(tree.d))
    if eta <= 0:
        raise ValueError("eta must be positive")
    far, near = [], []
    per_row: dict = {}
    stack = [(tree.root, tree.root)]
    count = 0
    while stack:
        s, t = stack.pop()
        if s.size == 0 or t.size == 0:
            continue
        count += 1
        per_row[s.id] = per_row.get(s.id, 0) + 1
        adm = admissible(s, t, eta)
        if not adm and s.children and t.children:
            for sc in reversed(s.children):
                for tc in reversed(t.children):
                    stack.append((sc, tc))
        elif adm:
            far.append((s, t))
        else:
            near.append((s, t))
    return BlockTree(far, near, max(per_row.values()), count)


def check_coverage(tree: ClusterTree, blocks: BlockTree) -> bool:
    """True if the leaf blocks tile the n x n index set exactly once."""
    n = tree.n
    cover = np.zeros((n, n), dtype=np.int32)
    for s, t in blocks.far + blocks.near:
        cover[np.ix_(s.idx, t.idx)] += 1
    return bool(np.all(cover == 1))


def translation_key(s: ClusterNode, t: ClusterNode):
    """(level, integer offset) of the column box relative to the row box."""
    side = s.box.side
    off = np.rint((t.box.lo - s.box.lo) / side).astype(int)
    return (s.level, tuple(int(o) for o in off))
