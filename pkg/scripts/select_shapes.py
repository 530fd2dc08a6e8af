"""Error ladders for the analytic test shapes, octree against omnitree.

Writes one CSV per shape (same columns as ``omnitree sweep``) and prints the
fitted convergence rate of each run. Example::

    python scripts/select_shapes.py --max-leaves 4096 --seeds 0 1 --out results/
    python scripts/select_shapes.py --time-rotate --shapes sphere rod --max-leaves 4096
"""
import argparse
import logging
import time
from pathlib import Path

from omnitree.driver import AdaptConfig, adapt_ladder, default_n_g, fill_data
from omnitree.metrics import default_n_e, evaluate, fitted_rate, rows_to_csv, sweep_rows
from omnitree.oracles import parse_shape


def run(shape: str, args) -> list[dict]:
    oracle = parse_shape(shape, time_rotate=args.time_rotate)
    d = oracle.d
    n_g = args.n_g or default_n_g(d)
    n_e = args.n_e or default_n_e(d)
    ladder = [2 ** k for k in range(4, args.max_leaves.bit_length()) if 2 ** k <= args.max_leaves]
    rows = []
    for seed in args.seeds:
        for mode in ("omnitree", "octree"):
            t0 = time.perf_counter()
            cache = {}
            results = []
            for snap in adapt_ladder(oracle, AdaptConfig(mode=mode, seed=seed, n_g=n_g, threads=args.threads), ladder):
                field = fill_data(snap.tree, oracle, n_g, seed, threads=args.threads, cache=cache)
                results.append(evaluate(snap.tree, field, oracle, n_e, seed, mode=mode, threads=args.threads))
            rate = fitted_rate([r.l1_error for r in results], [r.N for r in results])
            print(f"{oracle.name:>14} {mode:>8} seed={seed}  final l1={results[-1].l1_error:.5f} "
                  f"at N={results[-1].N}  fitted rate={rate:.3f}  ({time.perf_counter() - t0:.0f}s)")
            rows += sweep_rows(oracle.name, mode, d, results)
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shapes", nargs="+", default=["cube", "sphere", "tetrahedron", "rod"])
    p.add_argument("--max-leaves", type=int, default=8192)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--time-rotate", action="store_true")
    p.add_argument("--n-g", type=int, default=None)
    p.add_argument("--n-e", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    args.out.mkdir(parents=True, exist_ok=True)
    for shape in args.shapes:
        rows = run(shape, args)
        suffix = "_4d" if args.time_rotate else ""
        (args.out / f"{shape.replace(':', '_')}{suffix}.csv").write_text(rows_to_csv(rows))


if __name__ == "__main__":
    main()
