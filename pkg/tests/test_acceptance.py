"""Acceptance criteria 1-10: shape-level error, storage and structural checks.

Each test prints one PASS/FAIL line with the measured quantities; the lines
are repeated in the pytest terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from omnitree import codec
from omnitree.cli import main as cli_main
from omnitree.core import (Rectangle, TreeStructureError, is_normalized, leaf_rectangles, locate_many,
                           singleton_tree)
from omnitree.driver import AdaptConfig, adapt, adapt_ladder, fill_data, saltelli_points, sensitivity_scores
from omnitree.metrics import evaluate, fitted_rate, halfspace_l1_error
from omnitree.oracles import Cube, HalfSpace, Sphere, rotate_time
from omnitree.refinement import refine_leaf
from report import verdict
from trees import ReferenceOctree, interior_points, leaf_set

pytestmark = pytest.mark.slow

SPHERE_LADDER = [2 ** k for k in range(4, 14)]  # 16 .. 8192
SEEDS = (0, 1, 2)
N_E_3D = 1 << 18
TREES_FOR_MEM = []  # (criterion, mode, tree)


def run_ladder(oracle, mode, seed, ladder, n_e, n_g=None):
    d = oracle.d
    n_g = n_g or (4096 if d <= 3 else 8192)
    cfg = AdaptConfig(mode=mode, seed=seed, n_g=n_g)
    cache = {}
    out = []
    for snap in adapt_ladder(oracle, cfg, ladder):
        field = fill_data(snap.tree, oracle, n_g, seed, cache=cache)
        out.append((snap, field, evaluate(snap.tree, field, oracle, n_e, seed, mode=mode)))
    return out


@pytest.fixture(scope="module")
def sphere_runs():
    t0 = time.perf_counter()
    runs = {(mode, seed): run_ladder(Sphere(), mode, seed, SPHERE_LADDER, N_E_3D)
            for seed in SEEDS for mode in ("omnitree", "octree")}
    for (mode, _), rows in runs.items():
        TREES_FOR_MEM.extend(("SPH-1", mode, snap.tree) for snap, _, _ in rows)
    return runs, time.perf_counter() - t0


def test_cube_0_exactness():
    worst = 0.0
    ok = True
    for mode in ("omnitree", "octree"):
        for target in (1, 16, 1024, 8192):
            t0 = time.perf_counter()
            r = adapt(Cube(), AdaptConfig(mode=mode, target_leaves=target))
            field = fill_data(r.tree, Cube(), 4096, 0)
            res = evaluate(r.tree, field, Cube(), N_E_3D, 0, mode=mode)
            dt = time.perf_counter() - t0
            worst = max(worst, dt)
            ok &= res.N == 1 and res.l1_error == 0.0 and dt < 1.0
            TREES_FOR_MEM.append(("CUBE-0", mode, r.tree))
    verdict("CUBE-0", ok, f"N=1 and l1=0.0 for both modes, N* in {{1,16,1024,8192}}; slowest run {worst:.2f}s (<1s)")
    assert ok


def test_hs_1_anisotropy_gain():
    t0 = time.perf_counter()
    c = 1 / 3
    hs = HalfSpace(c, axis=0)
    ladder = [2 ** k for k in range(4, 11)]
    res = {}
    for mode in ("omnitree", "octree"):
        snaps = adapt_ladder(hs, AdaptConfig(mode=mode, seed=0), ladder)
        errs = [halfspace_l1_error(s.tree, fill_data(s.tree, hs, 4096, 0), c) for s in snaps]
        res[mode] = (snaps, errs)
        TREES_FOR_MEM.extend(("HS-1", mode, s.tree) for s in snaps)
    snaps, errs = res["omnitree"]
    splits = snaps[-1].splits
    share0 = splits[0] / sum(splits)
    o_snaps, o_errs = res["octree"]
    tail = slice(3, None)  # N* = 128 .. 1024
    oct_rate = fitted_rate(o_errs[tail], [s.tree.leaf_count for s in o_snaps[tail]])
    # the omnitree reaches zero error (float resolution) early; use the ladder
    # points before that, where its error still decreases
    live = [(s.tree.leaf_count, e) for s, e in zip(snaps, errs) if e > 0]
    live = [p for k, p in enumerate(live) if k == 0 or p[0] > live[k - 1][0]]
    omni_rate = fitted_rate([e for _, e in live], [n for n, _ in live]) if len(live) > 1 else math.inf
    resolved_at = next((s.tree.leaf_count for s, e in zip(snaps, errs) if e == 0), None)
    ratio = omni_rate / oct_rate
    dt = time.perf_counter() - t0
    ok_a, ok_b, ok_c = share0 >= 0.95, 0.35 <= oct_rate <= 0.65, ratio >= 2
    ok = ok_a and ok_b and ok_c and dt < 120
    verdict("HS-1", ok,
            f"(a) dim-0 split share {share0:.3f} (>=0.95); (b) octree tail rate {oct_rate:.3f} in [0.35,0.65]; "
            f"(c) omnitree rate {omni_rate:.2f} over N={[n for n, _ in live]}, error exactly 0 from N={resolved_at}, "
            f"ratio {ratio:.1f} (>=2); {dt:.1f}s")
    assert ok


def test_sph_1_dominance(sphere_runs):
    runs, dt = sphere_runs
    ok = True
    worst_margin = math.inf
    rates = {}
    for seed in SEEDS:
        omni = [r for r in runs[("omnitree", seed)] if r[0].target_leaves >= 256]
        octo = [r for r in runs[("octree", seed)] if r[0].target_leaves >= 256]
        for (_, _, a), (_, _, b) in zip(omni, octo):
            ok &= a.l1_error <= b.l1_error
            worst_margin = min(worst_margin, b.l1_error / a.l1_error)
        for mode, rows in (("omnitree", omni), ("octree", octo)):
            r = fitted_rate([x[2].l1_error for x in rows], [x[2].N for x in rows])
            rates[(mode, seed)] = r
            ok &= 0.3 <= r <= 1.1
    ok &= dt < 300
    fmt = ", ".join(f"{m[:4]}/{s}={r:.2f}" for (m, s), r in sorted(rates.items()))
    verdict("SPH-1", ok, f"omnitree l1 <= octree l1 at all N in 256..8192 for seeds {SEEDS} "
                         f"(smallest octree/omnitree ratio {worst_margin:.2f}); rates {fmt} in [0.3,1.1]; "
                         f"{dt:.0f}s")
    assert ok


def test_rot_1_four_d_sphere():
    t0 = time.perf_counter()
    o = rotate_time(Sphere())
    res = {}
    for mode in ("omnitree", "octree"):
        r = adapt(o, AdaptConfig(mode=mode, target_leaves=4096, seed=0))
        field = fill_data(r.tree, o, 8192, 0)
        res[mode] = evaluate(r.tree, field, o, 1 << 20, 0, mode=mode)
        TREES_FOR_MEM.append(("ROT-1", mode, r.tree))
    dt = time.perf_counter() - t0
    a, b = res["omnitree"].l1_error, res["octree"].l1_error
    ok = a <= 0.5 * b and dt < 600
    verdict("ROT-1", ok, f"omnitree l1 {a:.5f} <= 0.5 x octree l1 {b:.5f} (factor {b / a:.1f}) "
                         f"at N={res['omnitree'].N}/{res['octree'].N}; {dt:.0f}s")
    assert ok


def test_ent_1_information_density(sphere_runs):
    runs, _ = sphere_runs
    ok = True
    finals, worst_drop = [], 0.0
    for seed in SEEDS:
        h = [res.info_density for _, _, res in runs[("omnitree", seed)]]
        finals.append(h[-1])
        drops = [a - b for a, b in zip(h, h[1:])]
        worst_drop = max(worst_drop, max(drops))
        ok &= h[-1] >= 0.8 and all(dr <= 0.05 for dr in drops)
    verdict("ENT-1", ok, f"final H {', '.join(f'{x:.4f}' for x in finals)} (>=0.8); "
                         f"largest decrease between ladder points {worst_drop:.4f} (<=0.05)")
    assert ok


def test_mem_1_storage_accounting(sphere_runs):
    ok = True
    count = 0
    for _, mode, tree in TREES_FOR_MEM:
        d, nodes, n = tree.d, tree.node_count, tree.leaf_count
        ok &= codec.payload_bits(codec.encode(tree)) == d * nodes
        if mode == "octree":
            ok &= codec.payload_bits(codec.encode_octree(tree)) == nodes
        ok &= d * nodes < 2 * d * n
        count += 1
    criteria = sorted({c for c, _, _ in TREES_FOR_MEM})
    verdict("MEM-1", ok and count > 0, f"{count} trees from {', '.join(criteria)}: omnitree bits = d*nodes, "
                                       f"octree bits = nodes, d*nodes < 2dN")
    assert ok and count > 0


def test_prop_1_structural_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    steps_total = 0
    for k in range(1000):
        d = (2, 3, 4)[k % 3]
        tree = singleton_tree(d)
        for _ in range(int(rng.integers(1, 16))):
            leaf = int(rng.integers(tree.leaf_count))
            m = [0] * d
            m[int(rng.integers(d))] = 1
            tree = refine_leaf(tree, leaf, m)
            steps_total += 1
            if not is_normalized(tree):
                failures.append((k, "normalization"))
            if abs(sum(r.volume for r in leaf_rectangles(tree)) - 1.0) > 1e-12:
                failures.append((k, "tiling"))
        x = interior_points(tree, rng)
        reps = rng.integers(0, tree.leaf_count, 1000)
        lo, hi = tree.leaf_bounds()
        pts = lo[reps] + rng.uniform(0.01, 0.99, (1000, d)) * (hi[reps] - lo[reps])
        if not (np.array_equal(locate_many(tree, pts), reps) and
                np.array_equal(locate_many(tree, x), np.arange(tree.leaf_count))):
            failures.append((k, "location"))
        blob = codec.encode(tree)
        if codec.decode(blob) != tree:
            failures.append((k, "codec"))
        try:
            codec.decode(blob[:-1])
            failures.append((k, "truncation"))
        except codec.CodecError:
            pass
        if tree.node_count > 1:
            try:
                type(tree)(d, tree.labels[:-1])
                failures.append((k, "self-delimitation"))
            except TreeStructureError:
                pass
    dt = time.perf_counter() - t0
    ok = not failures and dt < 120
    verdict("PROP-1", ok, f"1000 sequences ({steps_total} refinements, d in 2..4): "
                          f"{len(failures)} failures; {dt:.1f}s")
    assert ok, failures[:5]


def test_prop_2_octree_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    for k in range(200):
        d = 2 + k % 2
        tree = singleton_tree(d)
        ref = ReferenceOctree(d)
        for _ in range(int(rng.integers(1, 25))):
            leaf = int(rng.integers(tree.leaf_count))
            rect = leaf_rectangles(tree)[leaf]
            ref.split(rect.level[0], rect.index)
            tree = refine_leaf(tree, leaf, [1] * d)
        mismatches += leaf_set(tree) != ref.leaf_set()
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 60
    verdict("PROP-2", ok, f"200 all-ones sequences in d=2,3: {mismatches} partition mismatches vs "
                          f"reference splitter; {dt:.1f}s")
    assert ok


def test_sens_1_estimator_accuracy():
    t0 = time.perf_counter()
    hs = HalfSpace(0.5)
    raw = np.array([sensitivity_scores(saltelli_points(Rectangle.root(3), 512, s).evaluate(hs), clamp=False)
                    for s in range(100)])
    mean = raw.mean(axis=0)
    clamped = np.maximum(raw, 0).mean(axis=0)
    dt = time.perf_counter() - t0
    ok = abs(mean[0] - 0.25) <= 0.02 and abs(mean[1]) <= 0.02 and abs(mean[2]) <= 0.02
    ok &= abs(clamped[1]) <= 0.02 and abs(clamped[2]) <= 0.02 and dt < 60
    verdict("SENS-1", ok, f"mean S*V over 100 seeds = ({mean[0]:.4f}, {mean[1]:.4f}, {mean[2]:.4f}); "
                          f"clamped ({clamped[0]:.4f}, {clamped[1]:.4f}, {clamped[2]:.4f}); "
                          f"targets 0.25/0/0 +-0.02; {dt:.1f}s")
    assert ok


def test_det_1_reproducibility(tmp_path, capsys):
    t0 = time.perf_counter()
    outputs = []
    for threads in (1, 1, 8):
        tree, field = tmp_path / "tree.omni", tmp_path / "field.omng"
        argv = ["refine", "--shape", "rod", "--mode", "omnitree", "--max-leaves", "512", "--seed", "11",
                "--threads", str(threads), "--tree-out", str(tree), "--field-out", str(field)]
        assert cli_main(argv) == 0
        refine_json = capsys.readouterr().out
        assert cli_main(["evaluate", "--tree", str(tree), "--field", str(field), "--shape", "rod",
                         "--seed", "11", "--threads", str(threads)]) == 0
        eval_json = capsys.readouterr().out
        outputs.append((tree.read_bytes(), field.read_bytes(), refine_json, eval_json))
    dt = time.perf_counter() - t0
    ok = outputs[0] == outputs[1] == outputs[2] and dt < 60
    n = json.loads(outputs[0][3])["N"]
    verdict("DET-1", ok, f"refine+evaluate on rod (N={n}) byte-identical across repeat and --threads 1/8; {dt:.1f}s")
    assert ok
