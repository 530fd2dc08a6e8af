"""Marker-based refinement of omnitrees.

Refinement runs in four steps: markers are attached to nodes, swept
bottom-up (a unit of refinement moves to a parent when every sibling either
carries it or already splits that dimension, the latter receiving a -1),
swept top-down (units that cannot be realized at a node are pushed to its
children), and finally the target tree is constructed top-down by mapping
every new rectangle back into the source tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import MAX_LEVEL, Omnitree, Rectangle, label_to_str, normalize, split_dims

MARKED, SWEPT_UP, RESOLVED = "marked", "swept_up", "resolved"


class RefinementError(RuntimeError):
    """Internal inconsistency while realizing markers (indicates a sweep bug)."""


@dataclass(frozen=True)
class RefinementPlan:
    """Markers keyed by preorder node id of ``tree``.

    Node ids are only meaningful for the tree the plan was built on; the plan
    is invalidated by :func:`refine`.
    """

    tree: Omnitree
    markers: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    phase: str = MARKED

    @classmethod
    def empty(cls, tree: Omnitree) -> RefinementPlan:
        return cls(tree, {})

    def marker(self, node: int) -> tuple[int, ...]:
        return self.markers.get(node, (0,) * self.tree.d)

    @property
    def n_m(self) -> int:
        return sum(abs(v) for m in self.markers.values() for v in m)

    def mark(self, node: int, m: Sequence[int]) -> RefinementPlan:
        return mark(self, node, m)


def mark(plan: RefinementPlan, node: int, m: Sequence[int]) -> RefinementPlan:
    """Accumulate marker ``m`` at ``node`` and return the new plan."""
    tree = plan.tree
    if plan.phase != MARKED:
        raise ValueError("markers can only be added before sweeping")
    if not 0 <= node < tree.node_count:
        raise IndexError(f"node {node} is not a node of the tree")
    m = tuple(int(v) for v in m)
    if len(m) != tree.d:
        raise ValueError(f"marker must have {tree.d} entries")
    if any(v < 0 for v in m):
        raise ValueError("user markers must be non-negative")
    if sum(m) < 1:
        raise ValueError("marker requests no refinement")
    markers = dict(plan.markers)
    old = markers.get(node, (0,) * tree.d)
    markers[node] = tuple(a + b for a, b in zip(old, m))
    return RefinementPlan(tree, markers, MARKED)


def _dense(plan: RefinementPlan) -> list[list[int]]:
    d = plan.tree.d
    out = [[0] * d for _ in range(plan.tree.node_count)]
    for node, m in plan.markers.items():
        out[node] = list(m)
    return out


def _sparse(tree: Omnitree, dense: list[list[int]], phase: str) -> RefinementPlan:
    markers = {i: tuple(m) for i, m in enumerate(dense) if any(m)}
    return RefinementPlan(tree, markers, phase)


def sweep_up(plan: RefinementPlan) -> RefinementPlan:
    """Lift refinement units towards the root, children before parents."""
    tree = plan.tree
    labels = tree.labels
    m = _dense(plan)
    changed = True
    while changed:
        changed = False
        for p in range(tree.node_count - 1, -1, -1):
            kids = tree.children(p)
            if not kids:
                continue
            for j in range(tree.d):
                while any(m[c][j] >= 1 for c in kids) and all(
                    m[c][j] >= 1 or ((labels[c] >> j) & 1 and m[c][j] == 0) for c in kids
                ):
                    for c in kids:
                        m[c][j] -= 1
                    m[p][j] += 1
                    changed = True
    return _sparse(tree, m, SWEPT_UP)


def sweep_down(plan: RefinementPlan) -> RefinementPlan:
    """Push units that cannot be realized at a node down to its children."""
    if plan.phase != SWEPT_UP:
        raise ValueError("sweep_down expects the output of sweep_up")
    tree = plan.tree
    labels = tree.labels
    m = _dense(plan)
    for node in range(tree.node_count):
        kids = tree.children(node)
        if not kids:
            continue
        for j in range(tree.d):
            k = m[node][j]
            if k <= 0:
                continue
            push = k if (labels[node] >> j) & 1 else k - 1
            if push:
                m[node][j] -= push
                for c in kids:
                    m[c][j] += push
    for node, mk in enumerate(m):
        for j, v in enumerate(mk):
            b = (labels[node] >> j) & 1
            if labels[node] and b + v not in (0, 1):
                raise RefinementError(f"node {node} cannot realize marker {mk}")
            if not labels[node] and v < 0:
                raise RefinementError(f"leaf {node} carries a negative marker {mk}")
    return _sparse(tree, m, RESOLVED)


def search_descendant(tree: Omnitree, q: Rectangle, node: int = 0) -> int:
    """Smallest subtree below ``node`` whose root rectangle covers ``q``."""
    s = node
    root = tree.rectangle(node)
    if not root.covers(q):
        raise ValueError(f"{root} does not cover {q}")
    struct = tree._structure
    labels = tree.labels
    d = tree.d
    while True:
        lab = labels[s]
        if lab == 0:
            return s
        lv = struct.level[s]
        if all(int(lv[j]) == q.level[j] for j in range(d)):
            return s
        dims = split_dims(lab, d)
        if any(q.level[j] < int(lv[j]) + 1 for j in dims):
            # any child would only partially cover q
            return s
        ordinal = 0
        for k, j in enumerate(dims):
            ordinal |= ((q.index[j] >> (q.level[j] - int(lv[j]) - 1)) & 1) << k
        s = tree.children(s)[ordinal]


def _expand(q_level: list[int], m: Sequence[int], out: list[int]) -> None:
    lab = 0
    for j, v in enumerate(m):
        if v > 0:
            lab |= 1 << j
    out.append(lab)
    if not lab:
        return
    for j in range(len(m)):
        if (lab >> j) & 1 and q_level[j] + 1 > MAX_LEVEL:
            raise ValueError(f"refinement exceeds maximum level {MAX_LEVEL}")
    rest = [v - 1 if v > 0 else 0 for v in m]
    child_level = [l + ((lab >> j) & 1) for j, l in enumerate(q_level)]
    for _ in range(1 << bin(lab).count("1")):
        _expand(child_level, rest, out)


def _construct(plan: RefinementPlan, q: Rectangle, source: int, out: list[int]) -> None:
    tree = plan.tree
    s = search_descendant(tree, q, source)
    ms = plan.marker(s)
    if tree.is_leaf(s):
        _expand(list(q.level), ms, out)
        return
    b = tree.labels[s]
    lab = 0
    for j in range(tree.d):
        v = ((b >> j) & 1) + ms[j]
        if v not in (0, 1):
            raise RefinementError(f"label arithmetic at node {s} leaves {{0, 1}} in dimension {j}")
        lab |= v << j
    if lab == 0:
        raise RefinementError(f"source node {s} collapsed while covering {q}")
    out.append(lab)
    for w in q.split(split_dims(lab, tree.d)):
        _construct(plan, w, s, out)


def construct_new_tree(plan: RefinementPlan, q: Rectangle | None = None, source: int = 0) -> Omnitree:
    """Build the target subtree for rectangle ``q`` from a resolved plan.

    With the defaults this builds the whole refined tree.
    """
    if plan.phase != RESOLVED:
        raise ValueError("construct_new_tree expects a plan resolved by both sweeps")
    tree = plan.tree
    q = q if q is not None else Rectangle.root(tree.d)
    out: list[int] = []
    _construct(plan, q, source, out)
    return Omnitree(tree.d, tuple(out))


def refine(tree: Omnitree, plan: RefinementPlan, normalized: bool = True) -> Omnitree:
    """Apply all markers of ``plan`` and return the refined tree.

    Hoisting a split out of a node can leave the halves of that node with
    children that all carry the hoisted split; marker arithmetic cannot
    express that per half, so with ``normalized`` a final pass restores
    normal form. The leaf partition is the same either way.
    """
    if plan.tree != tree:
        raise ValueError("plan was built for a different tree")
    if plan.phase != MARKED:
        raise ValueError("refine expects a freshly marked plan")
    if not plan.markers:
        return tree
    new = construct_new_tree(sweep_down(sweep_up(plan)))
    return normalize(new) if normalized else new


def refine_leaf(tree: Omnitree, leaf: int, m: Sequence[int], normalized: bool = True) -> Omnitree:
    """Refine the leaf with ordinal ``leaf`` by marker ``m``."""
    node = int(tree.leaf_ids()[leaf])
    return refine(tree, mark(RefinementPlan.empty(tree), node, m), normalized)


def render_location_stack(plan: RefinementPlan) -> str:
    """Debug view: one row per node, one column per dimension.

    Each cell holds the location code, a trailing ``λ`` when the node splits
    that dimension, and ``+``/``-`` for positive/negative marker units.
    """
    tree = plan.tree
    rows = []
    for node in range(tree.node_count):
        code = tree.rectangle(node).location_code()
        m = plan.marker(node)
        cells = []
        for j in range(tree.d):
            cell = code[j]
            if (tree.labels[node] >> j) & 1:
                cell += "λ"
            cell += "+" * max(m[j], 0) + "-" * max(-m[j], 0)
            cells.append(cell)
        rows.append(cells)
    width = [max(len(r[j]) for r in rows) for j in range(tree.d)]
    lines = []
    for node, cells in enumerate(rows):
        body = " | ".join(c.ljust(w) for c, w in zip(cells, width))
        lines.append(f"{node:>4} {label_to_str(tree.labels[node], tree.d)}  {body}")
    return "\n".join(lines)
