"""Omnitree data model.

A d-dimensional omnitree is stored as its preorder sequence of node labels.
A label is an int bitmask: bit ``j`` set means the node bisects dimension
``j``. Leaves carry label 0, nonleaf nodes a nonzero label with
``2**popcount(label)`` children.

Children of a node are sequenced in Z order restricted to the split
dimensions, with the lowest split dimension as the least significant bit of
the child ordinal (dimension 0 varies fastest).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_LEVEL = 62


class TreeStructureError(ValueError):
    """Raised for label sequences that do not form a valid omnitree."""


def popcount(x: int) -> int:
    return bin(x).count("1")


def split_dims(label: int, d: int) -> tuple[int, ...]:
    return tuple(j for j in range(d) if (label >> j) & 1)


def label_to_str(label: int, d: int) -> str:
    """Render a label as ``b_0 b_1 ... b_{d-1}``, e.g. ``"10"`` splits dim 0."""
    return "".join("1" if (label >> j) & 1 else "0" for j in range(d))


def label_from_str(bits: str) -> int:
    if not bits or any(c not in "01" for c in bits):
        raise ValueError(f"invalid label string {bits!r}")
    return sum(1 << j for j, c in enumerate(bits) if c == "1")


def child_ordinal(label: int, e: Mapping[int, int], d: int | None = None) -> int:
    """Ordinal of the child selected by half-space bits ``e`` (dim -> 0/1).

    ``e`` must assign a bit to exactly the split dimensions of ``label``.
    """
    dims = split_dims(label, d if d is not None else label.bit_length())
    if set(e) != set(dims):
        extra = set(e) - set(dims)
        if extra:
            raise ValueError(f"dimensions {sorted(extra)} are not split by this label")
        raise ValueError(f"missing bits for split dimensions {sorted(set(dims) - set(e))}")
    ordinal = 0
    for k, j in enumerate(dims):
        if e[j] not in (0, 1):
            raise ValueError("child bits must be 0 or 1")
        ordinal |= e[j] << k
    return ordinal


def child_bits(label: int, ordinal: int, d: int) -> dict[int, int]:
    """Inverse of :func:`child_ordinal`."""
    dims = split_dims(label, d)
    if not 0 <= ordinal < (1 << len(dims)):
        raise ValueError("child ordinal out of range")
    return {j: (ordinal >> k) & 1 for k, j in enumerate(dims)}


@dataclass(frozen=True)
class Rectangle:
    """Dyadic box Q_{i,l}: lower corner i * 2^-l, upper corner (i+1) * 2^-l."""

    level: tuple[int, ...]
    index: tuple[int, ...]

    def __post_init__(self):
        if len(self.level) != len(self.index):
            raise ValueError("level and index must have equal length")
        for l, i in zip(self.level, self.index):
            if l < 0 or l > MAX_LEVEL:
                raise ValueError(f"level {l} outside [0, {MAX_LEVEL}]")
            if not 0 <= i < (1 << l):
                raise ValueError(f"index {i} outside [0, 2**{l})")

    @classmethod
    def root(cls, d: int) -> Rectangle:
        return cls((0,) * d, (0,) * d)

    @property
    def d(self) -> int:
        return len(self.level)

    @property
    def lower(self) -> np.ndarray:
        return np.ldexp(np.array(self.index, dtype=float), -np.array(self.level))

    @property
    def upper(self) -> np.ndarray:
        return np.ldexp(np.array(self.index, dtype=float) + 1.0, -np.array(self.level))

    @property
    def volume(self) -> float:
        return float(np.ldexp(1.0, -sum(self.level)))

    def location_code(self) -> tuple[str, ...]:
        return tuple(format(i, f"0{l}b") if l else "" for l, i in zip(self.level, self.index))

    @classmethod
    def from_location_code(cls, code: Sequence[str]) -> Rectangle:
        for s in code:
            if any(c not in "01" for c in s):
                raise ValueError(f"invalid location code string {s!r}")
        return cls(tuple(len(s) for s in code), tuple(int(s, 2) if s else 0 for s in code))

    def covers(self, other: Rectangle) -> bool:
        """True if ``other`` lies inside this box."""
        for l, i, lo, io in zip(self.level, self.index, other.level, other.index):
            if lo < l or (io >> (lo - l)) != i:
                return False
        return True

    def split(self, dims: Iterable[int]) -> list[Rectangle]:
        """Children from bisecting ``dims``, in child-ordinal order."""
        dims = sorted(dims)
        out = []
        for o in range(1 << len(dims)):
            level, index = list(self.level), list(self.index)
            for k, j in enumerate(dims):
                level[j] += 1
                index[j] = 2 * index[j] + ((o >> k) & 1)
            out.append(Rectangle(tuple(level), tuple(index)))
        return out

    def __str__(self):
        return "Q(i={}, l={})".format(self.index, self.level)


@dataclass(frozen=True)
class NodeStats:
    nodes: int
    leaves: int
    mean_leaf_depth: float
    max_level: tuple[int, ...]


class _Structure:
    """Derived arrays of a label sequence, computed once per tree."""

    def __init__(self, d: int, labels: Sequence[int]):
        n = len(labels)
        level = np.zeros((n, d), dtype=np.int64)
        index = np.zeros((n, d), dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        parent = np.full(n, -1, dtype=np.int64)
        children: list[list[int]] = [[] for _ in range(n)]
        full = (1 << d) - 1

        if n == 0:
            raise TreeStructureError("empty label sequence")
        # frames: [node, split dims, child count]
        stack: list[tuple[int, tuple[int, ...], int]] = []
        pos = 0
        while True:
            if pos >= n:
                raise TreeStructureError("label sequence ended before the preorder walk completed")
            lab = labels[pos]
            if not 0 <= lab <= full:
                raise TreeStructureError(f"label {lab} at position {pos} is not a {d}-bit label")
            if stack:
                p, dims, _ = stack[-1]
                o = len(children[p])
                children[p].append(pos)
                parent[pos] = p
                depth[pos] = depth[p] + 1
                level[pos] = level[p]
                index[pos] = index[p]
                for k, j in enumerate(dims):
                    level[pos, j] += 1
                    index[pos, j] = 2 * index[pos, j] + ((o >> k) & 1)
                    if level[pos, j] > MAX_LEVEL:
                        raise TreeStructureError(f"level exceeds {MAX_LEVEL} in dimension {j}")
            if lab:
                dims = split_dims(lab, d)
                stack.append((pos, dims, 1 << len(dims)))
            else:
                while stack and len(children[stack[-1][0]]) == stack[-1][2]:
                    stack.pop()
            pos += 1
            if not stack:
                break
        if pos != n:
            raise TreeStructureError(
                f"preorder walk completed after {pos} labels but sequence has {n}")

        self.level = level
        self.index = index
        self.depth = depth
        self.parent = parent
        self.children = [tuple(c) for c in children]
        lab_arr = np.asarray(labels, dtype=np.int64)
        self.labels = lab_arr
        self.leaf_ids = np.flatnonzero(lab_arr == 0)
        counts = np.array([len(c) for c in children], dtype=np.int64)
        self.child_start = np.concatenate([[0], np.cumsum(counts)])
        self.child_flat = np.array([c for cs in children for c in cs], dtype=np.int64)
        leaf_ord = np.full(n, -1, dtype=np.int64)
        leaf_ord[self.leaf_ids] = np.arange(len(self.leaf_ids))
        self.leaf_ordinal = leaf_ord


@dataclass(frozen=True, eq=True)
class Omnitree:
    """Immutable omnitree given by its dimension and preorder label sequence."""

    d: int
    labels: tuple[int, ...]

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        self._structure  # validate eagerly

    @classmethod
    def singleton(cls, d: int) -> Omnitree:
        return singleton_tree(d)

    @classmethod
    def from_strings(cls, labels: Iterable[str]) -> Omnitree:
        labels = list(labels)
        d = len(labels[0])
        if any(len(s) != d for s in labels):
            raise ValueError("all labels must have the same length")
        return cls(d, tuple(label_from_str(s) for s in labels))

    @classmethod
    def from_leaves(cls, d: int, leaves: Iterable[Rectangle]) -> Omnitree:
        return tree_from_leaves(d, leaves)

    def __hash__(self):
        return hash((self.d, self.labels))

    @cached_property
    def _structure(self) -> _Structure:
        return _Structure(self.d, self.labels)

    @property
    def node_count(self) -> int:
        return len(self.labels)

    @property
    def leaf_count(self) -> int:
        return len(self._structure.leaf_ids)

    def label_strings(self) -> list[str]:
        return [label_to_str(b, self.d) for b in self.labels]

    def is_leaf(self, node: int) -> bool:
        return self.labels[node] == 0

    def children(self, node: int) -> tuple[int, ...]:
        return self._structure.children[node]

    def parent(self, node: int) -> int:
        return int(self._structure.parent[node])

    def rectangle(self, node: int) -> Rectangle:
        s = self._structure
        return Rectangle(tuple(int(v) for v in s.level[node]), tuple(int(v) for v in s.index[node]))

    def leaf_ids(self) -> np.ndarray:
        return self._structure.leaf_ids

    def leaf_ordinal(self, node: int) -> int:
        return int(self._structure.leaf_ordinal[node])

    def leaf_levels(self) -> np.ndarray:
        s = self._structure
        return s.level[s.leaf_ids]

    def leaf_indices(self) -> np.ndarray:
        s = self._structure
        return s.index[s.leaf_ids]

    def leaf_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of all leaves, shape (N, d) each."""
        lv, ix = self.leaf_levels(), self.leaf_indices()
        return np.ldexp(ix.astype(float), -lv), np.ldexp(ix.astype(float) + 1.0, -lv)

    def __str__(self):
        return "Omnitree(d={}, [{}])".format(self.d, " ".join(self.label_strings()))


def singleton_tree(d: int) -> Omnitree:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"invalid dimension {d!r}")
    return Omnitree(int(d), (0,))


def leaf_rectangles(tree: Omnitree) -> list[Rectangle]:
    """Leaf boxes in depth-first Z order."""
    lv, ix = tree.leaf_levels(), tree.leaf_indices()
    return [Rectangle(tuple(map(int, l)), tuple(map(int, i))) for l, i in zip(lv, ix)]


def locate_many(tree: Omnitree, x) -> np.ndarray:
    """Leaf ordinals for an (n, d) array of points in [0, 1]^d.

    Cells are half-open ``[lower, upper)``; the upper domain face 1.0 belongs
    to the last cell along that dimension.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != tree.d:
        raise ValueError(f"expected points of shape (n, {tree.d})")
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("coordinates must lie in [0, 1]")
    s = tree._structure
    node = np.zeros(len(x), dtype=np.int64)
    active = np.flatnonzero(s.labels[node] != 0)
    while active.size:
        nd = node[active]
        lab = s.labels[nd]
        ordinal = np.zeros(active.size, dtype=np.int64)
        shift = np.zeros(active.size, dtype=np.int64)
        for j in range(tree.d):
            split = ((lab >> j) & 1).astype(bool)
            if not split.any():
                continue
            lv = s.level[nd, j]
            # point is in the upper half iff x * 2^(l+1) >= 2i + 1 (exact in binary)
            upper = np.ldexp(x[active, j], lv + 1) >= 2 * s.index[nd, j] + 1
            ordinal |= np.where(split, upper.astype(np.int64) << shift, 0)
            shift += split
        node[active] = s.child_flat[s.child_start[nd] + ordinal]
        keep = s.labels[node[active]] != 0
        active = active[keep]
    return s.leaf_ordinal[node]


def locate(tree: Omnitree, x) -> int:
    return int(locate_many(tree, np.asarray(x, dtype=float).reshape(1, -1))[0])


def node_stats(tree: Omnitree) -> NodeStats:
    s = tree._structure
    return NodeStats(
        nodes=tree.node_count,
        leaves=tree.leaf_count,
        mean_leaf_depth=float(s.depth[s.leaf_ids].mean()),
        max_level=tuple(int(v) for v in s.level.max(axis=0)),
    )


def is_normalized(tree: Omnitree) -> bool:
    """Check that no node misses a split that all of its children carry."""
    labels = tree.labels
    for node, kids in enumerate(tree._structure.children):
        if not kids:
            continue
        common = (1 << tree.d) - 1
        for c in kids:
            common &= labels[c]
        if common & ~labels[node]:
            return False
    return True


def normalize(tree: Omnitree) -> Omnitree:
    """Return the normalized tree with the same leaf partition."""
    if is_normalized(tree):
        return tree
    return tree_from_leaves(tree.d, leaf_rectangles(tree))


def split_histogram(tree: Omnitree) -> list[int]:
    """Number of nonleaf nodes splitting each dimension."""
    return [sum((b >> j) & 1 for b in tree.labels) for j in range(tree.d)]


def tree_from_leaves(d: int, leaves: Iterable[Rectangle]) -> Omnitree:
    """Build the normalized omnitree whose leaves are exactly ``leaves``.

    At every box the split set is the set of dimensions whose midplane is
    crossed by no leaf. This is the unique normalized tree for a partition.
    """
    leaves = list(leaves)
    if not leaves:
        raise ValueError("no leaves given")
    lv = np.array([r.level for r in leaves], dtype=np.int64).reshape(len(leaves), d)
    ix = np.array([r.index for r in leaves], dtype=np.int64).reshape(len(leaves), d)
    labels: list[int] = []

    def build(sel: np.ndarray, blevel: np.ndarray):
        if sel.size == 1:
            if np.any(lv[sel[0]] != blevel):
                raise ValueError("leaves do not tile the domain")
            labels.append(0)
            return
        finer = np.all(lv[sel] > blevel, axis=0)
        dims = np.flatnonzero(finer)
        if dims.size == 0:
            raise ValueError("leaves overlap or do not form a dyadic omnitree partition")
        labels.append(sum(1 << int(j) for j in dims))
        # bit of each leaf index just below the box level, per split dim
        ordinal = np.zeros(sel.size, dtype=np.int64)
        for k, j in enumerate(dims):
            bit = (ix[sel, j] >> (lv[sel, j] - blevel[j] - 1)) & 1
            ordinal |= bit << k
        child_level = blevel.copy()
        child_level[dims] += 1
        order = np.argsort(ordinal, kind="stable")
        sel_sorted, ord_sorted = sel[order], ordinal[order]
        bounds = np.searchsorted(ord_sorted, np.arange((1 << dims.size) + 1))
        for o in range(1 << dims.size):
            part = sel_sorted[bounds[o]:bounds[o + 1]]
            if part.size == 0:
                raise ValueError("leaves do not tile the domain")
            build(part, child_level)

    build(np.arange(len(leaves)), np.zeros(d, dtype=np.int64))
    tree = Omnitree(d, tuple(labels))
    if tree.leaf_count != len(leaves) or set(leaf_rectangles(tree)) != set(leaves):
        raise ValueError("leaves do not tile the domain")
    return tree
