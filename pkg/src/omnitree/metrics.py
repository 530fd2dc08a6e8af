"""Error, convergence and storage metrics for adapted trees.

The L1 error is a Monte Carlo estimate over the unit cube, normalized by the
number of samples so it reads as the volume fraction on which the stored
field disagrees with the shape.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .codec import storage_report
from .core import Omnitree, locate_many
from .rng import substream

CSV_HEADER = ("shape", "mode", "d", "N", "l1_error", "rate", "tree_bits", "data_bits", "info_density", "seed")
L1_CHUNK = 1 << 16


def default_n_e(d: int) -> int:
    return 1 << 18 if d <= 3 else 1 << 24


def _check_field(tree: Omnitree, field) -> np.ndarray:
    field = np.asarray(field)
    if field.ndim != 1 or len(field) != tree.leaf_count:
        raise ValueError(f"field has {field.size} entries but the tree has {tree.leaf_count} leaves")
    return field.astype(bool)


def l1_error(tree: Omnitree, field, oracle, n_e: int, seed: int, threads: int = 1) -> float:
    """Fraction of ``n_e`` uniform points where the stored bit and the oracle disagree.

    Points are drawn in chunks of ``L1_CHUNK``, each from its own substream
    keyed by (seed, leaf count, chunk), so the estimate does not depend on
    how chunks are scheduled. Trees with the same leaf count share samples,
    which makes octree/omnitree comparisons at matched N less noisy.
    """
    field = _check_field(tree, field)
    if n_e < 1:
        raise ValueError("n_e must be positive")
    d = tree.d
    starts = range(0, n_e, L1_CHUNK)

    def work(k_start):
        k, start = k_start
        n = min(L1_CHUNK, n_e - start)
        x = substream(seed, "l1", d, tree.leaf_count, k).random((n, d))
        return int(np.count_nonzero(field[locate_many(tree, x)] != oracle(x)))

    jobs = list(enumerate(starts))
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            wrong = sum(pool.map(work, jobs))
    else:
        wrong = sum(map(work, jobs))
    return wrong / n_e


def halfspace_l1_error(tree: Omnitree, field, c: float, axis: int = 0) -> float:
    """Exact L1 error of a field against the halfspace ``x[axis] < c``.

    Each leaf contributes its volume times |bit - inside fraction|; no
    sampling is involved.
    """
    field = _check_field(tree, field).astype(float)
    lo, hi = tree.leaf_bounds()
    vol = np.prod(hi - lo, axis=1)
    width = hi[:, axis] - lo[:, axis]
    # boxes narrower than float resolution have zero volume here anyway
    safe = np.where(width > 0, width, 1.0)
    frac = np.clip((c - lo[:, axis]) / safe, 0.0, 1.0)
    return float(np.sum(vol * np.abs(field - frac)))


def convergence_rate(e1: float, n1: float, e2: float, n2: float) -> float:
    """r = log(e1 / e2) / log(n2 / n1); nan when an error is zero or negative."""
    if not n2 > n1 >= 1:
        raise ValueError("need n2 > n1 >= 1")
    if e1 <= 0 or e2 <= 0:
        return math.nan
    return math.log(e1 / e2) / math.log(n2 / n1)


def fitted_rate(errors: Sequence[float], leaves: Sequence[float]) -> float:
    """Least-squares slope of -log(error) against log(N); nan if any error is zero."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(leaves, dtype=float)
    if len(e) < 2 or np.any(e <= 0):
        return math.nan
    slope = np.polyfit(np.log(n), np.log(e), 1)[0]
    return float(-slope)


def information_density(field) -> float:
    """Shannon entropy (bits) of the 0/1 distribution of ``field``."""
    field = np.asarray(field)
    if field.size == 0:
        raise ValueError("information density of an empty field is undefined")
    p1 = np.count_nonzero(field) / field.size
    h = 0.0
    for p in (p1, 1.0 - p1):
        if p > 0:
            h -= p * math.log2(p)
    return min(h, 1.0)


@dataclass(frozen=True)
class EvalResult:
    N: int
    l1_error: float
    tree_bits: int
    data_bits: int
    info_density: float
    n_e: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(tree: Omnitree, field, oracle, n_e: int, seed: int, mode: str = "omnitree",
             threads: int = 1) -> EvalResult:
    """Error, entropy and storage for one tree/field pair.

    ``mode`` picks the tree coding used for ``tree_bits``: one bit per node
    for octree runs, d bits per node for omnitree runs.
    """
    field = _check_field(tree, field)
    report = storage_report(tree)
    if mode == "octree":
        if report.tree_bits_octree is None:
            raise ValueError("octree mode requested for a tree with partial splits")
        tree_bits = report.tree_bits_octree
    elif mode == "omnitree":
        tree_bits = report.tree_bits_omnitree
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return EvalResult(
        N=tree.leaf_count,
        l1_error=l1_error(tree, field, oracle, n_e, seed, threads),
        tree_bits=tree_bits,
        data_bits=report.data_bits,
        info_density=information_density(field),
        n_e=n_e,
        seed=seed,
    )


def sweep_rows(shape: str, mode: str, d: int, results: Iterable[EvalResult]) -> list[dict]:
    """CSV rows for one (shape, mode) ladder; ``rate`` compares with the previous row."""
    rows = []
    prev = None
    for r in results:
        rate = ""
        if prev is not None and r.N > prev.N:
            rate = convergence_rate(prev.l1_error, prev.N, r.l1_error, r.N)
        rows.append(dict(shape=shape, mode=mode, d=d, N=r.N, l1_error=r.l1_error, rate=rate,
                         tree_bits=r.tree_bits, data_bits=r.data_bits,
                         info_density=r.info_density, seed=r.seed))
        prev = r
    return rows


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v
