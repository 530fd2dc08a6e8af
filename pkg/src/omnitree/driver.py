"""Priority-queue adaptation of octrees and omnitrees to a shape oracle.

Each leaf is scored from a Saltelli sample layout inside its box. Octree
mode uses the sample variance times the box volume; omnitree mode uses the
variance-scaled first-order sensitivity index of every dimension times the
box volume. The highest-priority refinement is realized one at a time until
the leaf budget is reached.

First-order indices come from the direct Saltelli estimator
``S_i * V ~ mean(f(B) * (f(A_B^i) - f(A)))`` instead of a moment-independent
delta estimator. A leaf whose variance is explained by no single dimension
(a thin diagonal feature, say) has all first-order estimates near zero; such
leaves fall back to total-effect estimates so they are not mistaken for
resolved ones.
"""
from __future__ import annotations

import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import MAX_LEVEL, Omnitree, Rectangle, singleton_tree, tree_from_leaves
from .refinement import refine_leaf
from .rng import substream

log = logging.getLogger(__name__)

OCTREE, OMNITREE = "octree", "omnitree"
ALL_DIMS = -1


def default_n_g(d: int) -> int:
    return 4096 if d <= 3 else 8192


@dataclass
class AdaptConfig:
    mode: str = OMNITREE
    target_leaves: int = 1024
    n_s: int = 512
    n_g: int | None = None
    seed: int = 0
    threads: int = 1
    engine: str = "partition"  # or "refine": one refine() call per step

    def __post_init__(self):
        if self.mode not in (OCTREE, OMNITREE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.target_leaves < 1:
            raise ValueError("target_leaves must be >= 1")
        if self.n_s < 1 or self.n_s & (self.n_s - 1):
            raise ValueError("n_s must be a power of two")
        if self.engine not in ("partition", "refine"):
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass
class SampleBatch:
    """Saltelli layout: A, B (n_s, d) and the cross matrices A_B^i, B_A^i (d, n_s, d)."""

    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray
    BA: np.ndarray
    fA: np.ndarray | None = None
    fB: np.ndarray | None = None
    fAB: np.ndarray | None = None
    fBA: np.ndarray | None = None

    @property
    def n_s(self) -> int:
        return len(self.A)

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def points(self) -> np.ndarray:
        d = self.d
        return np.concatenate([self.A, self.B, self.AB.reshape(-1, d), self.BA.reshape(-1, d)])

    def evaluate(self, oracle: Callable) -> SampleBatch:
        n, d = self.n_s, self.d
        f = np.asarray(oracle(self.points), dtype=float)
        return SampleBatch(self.A, self.B, self.AB, self.BA,
                           f[:n], f[n:2 * n], f[2 * n:(2 + d) * n].reshape(d, n),
                           f[(2 + d) * n:].reshape(d, n))


def _key(rect: Rectangle) -> tuple[int, ...]:
    return (rect.d, *rect.level, *rect.index)


def saltelli_points(rect: Rectangle, n_s: int, seed: int) -> SampleBatch:
    if n_s < 1 or n_s & (n_s - 1):
        raise ValueError("n_s must be a power of two")
    d = rect.d
    lo, hi = rect.lower, rect.upper
    A = lo + substream(seed, "saltelli-A", *_key(rect)).random((n_s, d)) * (hi - lo)
    B = lo + substream(seed, "saltelli-B", *_key(rect)).random((n_s, d)) * (hi - lo)
    AB = np.repeat(A[None], d, axis=0)
    BA = np.repeat(B[None], d, axis=0)
    for i in range(d):
        AB[i, :, i] = B[:, i]
        BA[i, :, i] = A[:, i]
    return SampleBatch(A, B, AB, BA)


def variance_score(batch: SampleBatch) -> float:
    y = np.concatenate([batch.fA, batch.fB])
    if y.min() == y.max():
        return 0.0
    return float(np.var(y, ddof=1))


def sensitivity_scores(batch: SampleBatch, clamp: bool = True) -> np.ndarray:
    """Variance-scaled first-order indices Var[E[Y | x_i]] per dimension."""
    s = np.mean(batch.fB[None, :] * (batch.fAB - batch.fA[None, :]), axis=1)
    return np.maximum(s, 0.0) if clamp else s


def total_sensitivity_scores(batch: SampleBatch) -> np.ndarray:
    """Jansen total-effect estimates E[Var[Y | x_~i]] per dimension (non-negative)."""
    return 0.5 * np.mean((batch.fA[None, :] - batch.fAB) ** 2, axis=1)


@dataclass(frozen=True)
class Priority:
    leaf: Rectangle
    dim: int  # ALL_DIMS in octree mode
    score: float

    @property
    def sort_key(self):
        return (-self.score, self.leaf.location_code(), self.dim)


def leaf_priorities(rect: Rectangle, batch: SampleBatch, mode: str) -> list[Priority]:
    vol = rect.volume
    var = variance_score(batch)
    if mode == OCTREE:
        return [Priority(rect, ALL_DIMS, var * vol)]
    if var == 0.0:
        return [Priority(rect, j, 0.0) for j in range(rect.d)]
    s = sensitivity_scores(batch)
    if not s.any():
        s = total_sensitivity_scores(batch)
    return [Priority(rect, j, float(s[j]) * vol) for j in range(rect.d)]


@dataclass
class AdaptResult:
    tree: Omnitree
    resolved: bool  # stopped because every priority was zero
    refinements: int
    splits: list[int] = field(default_factory=list)  # realized splits per dimension
    target_leaves: int = 0

    @property
    def status(self) -> str:
        return "perfectly_resolved" if self.resolved else "ok"


def _score(oracle, rect: Rectangle, cfg: AdaptConfig) -> list[Priority]:
    batch = saltelli_points(rect, cfg.n_s, cfg.seed).evaluate(oracle)
    return leaf_priorities(rect, batch, cfg.mode)


def adapt_ladder(oracle, cfg: AdaptConfig, ladder: Sequence[int]) -> list[AdaptResult]:
    """Adapt once and snapshot the tree at each leaf target of ``ladder``.

    A snapshot for target N* is taken after the first refinement that brings
    the leaf count to at least N*, so every snapshot equals a standalone
    :func:`adapt` run with that target.
    """
    ladder = sorted(set(int(n) for n in ladder))
    if not ladder or ladder[0] < 1:
        raise ValueError("ladder must contain positive leaf targets")
    d = oracle.d
    root = Rectangle.root(d)
    leaves: dict[Rectangle, None] = {root: None}
    tree = singleton_tree(d)
    splits = [0] * d
    refinements = 0
    heap: list = []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def push_scores(rects):
        scored = pool.map(lambda r: _score(oracle, r, cfg), rects) if pool else (_score(oracle, r, cfg) for r in rects)
        for prios in scored:
            for p in prios:
                heapq.heappush(heap, (p.sort_key, p))

    def snapshot(target, resolved):
        t = tree if cfg.engine == "refine" else tree_from_leaves(d, leaves)
        return AdaptResult(t, resolved, refinements, list(splits), target)

    results: list[AdaptResult] = []
    pending = list(ladder)
    try:
        push_scores([root])
        while pending:
            while pending and len(leaves) >= pending[0]:
                results.append(snapshot(pending.pop(0), False))
            if not pending:
                break
            entry = None
            while heap:
                _, cand = heapq.heappop(heap)
                if cand.leaf in leaves:
                    entry = cand
                    break
            if entry is None or entry.score <= 0.0:
                log.warning("all refinement priorities are zero at %d leaves; shape is resolved", len(leaves))
                for target in pending:
                    results.append(snapshot(target, True))
                break
            rect = entry.leaf
            dims = range(d) if entry.dim == ALL_DIMS else [entry.dim]
            if any(rect.level[j] >= MAX_LEVEL for j in dims):
                continue
            children = rect.split(dims)
            if cfg.engine == "refine":
                ordinal = _leaf_ordinal(tree, rect)
                marker = [1 if j in dims else 0 for j in range(d)]
                tree = refine_leaf(tree, ordinal, marker)
            del leaves[rect]
            for c in children:
                leaves[c] = None
            for j in dims:
                splits[j] += 1
            refinements += 1
            push_scores(children)
    finally:
        if pool:
            pool.shutdown()
    return results


def _leaf_ordinal(tree: Omnitree, rect: Rectangle) -> int:
    lv, ix = tree.leaf_levels(), tree.leaf_indices()
    hit = np.flatnonzero(np.all(lv == rect.level, axis=1) & np.all(ix == rect.index, axis=1))
    if hit.size != 1:
        raise KeyError(f"{rect} is not a leaf")
    return int(hit[0])


def adapt(oracle, cfg: AdaptConfig) -> AdaptResult:
    return adapt_ladder(oracle, cfg, [cfg.target_leaves])[0]


def fill_data(tree: Omnitree, oracle, n_g: int, seed: int, threads: int = 1,
              cache: dict | None = None, chunk: int = 64) -> np.ndarray:
    """Leaf bits: 1 iff the mean of ``n_g`` uniform oracle samples in the leaf is >= 0.5.

    ``cache`` (keyed by leaf rectangle) lets ladder runs reuse earlier leaves;
    the bits depend only on the leaf box, ``n_g`` and ``seed``.
    """
    d = tree.d
    lv, ix = tree.leaf_levels(), tree.leaf_indices()
    lo_all, hi_all = tree.leaf_bounds()
    n = len(lv)
    bits = np.empty(n, dtype=np.uint8)
    todo = []
    for k in range(n):
        key = (tuple(lv[k].tolist()), tuple(ix[k].tolist()))
        if cache is not None and (n_g, seed, key) in cache:
            bits[k] = cache[(n_g, seed, key)]
        else:
            todo.append((k, key))

    def work(items):
        pts = np.empty((len(items) * n_g, d))
        for m, (k, key) in enumerate(items):
            u = substream(seed, "fill", d, *key[0], *key[1]).random((n_g, d))
            pts[m * n_g:(m + 1) * n_g] = lo_all[k] + u * (hi_all[k] - lo_all[k])
        vals = np.asarray(oracle(pts), dtype=float).reshape(len(items), n_g)
        return vals.mean(axis=1) >= 0.5

    groups = [todo[s:s + chunk] for s in range(0, len(todo), chunk)]
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(work, groups))
    else:
        outs = [work(g) for g in groups]
    for items, out in zip(groups, outs):
        for (k, key), b in zip(items, out):
            bits[k] = b
            if cache is not None:
                cache[(n_g, seed, key)] = bool(b)
    return bits
