"""Command line entry point: ``omnitree {refine,evaluate,sweep,export,inspect}``.

Machine-readable results go to stdout (JSON or CSV), diagnostics to stderr.
Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
whose keys are the long option names; explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import codec
from .core import Omnitree, is_normalized, node_stats, split_histogram
from .driver import AdaptConfig, adapt, adapt_ladder, default_n_g, fill_data
from .mesh import MeshError
from .metrics import default_n_e, evaluate, rows_to_csv, sweep_rows
from .oracles import ShapeError, parse_shape

log = logging.getLogger("omnitree")

EXIT_OK, EXIT_ERROR, EXIT_RESOLVED = 0, 1, 2


class CliError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _threads(args) -> int:
    if args.threads is not None:
        return int(args.threads)
    return int(os.environ.get("OMNITREE_THREADS", "1"))


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _ladder(args) -> list[int]:
    if args.ladder:
        ladder = _int_list(args.ladder)
    else:
        ladder, n = [], args.min_leaves
        while n <= args.max_leaves:
            ladder.append(n)
            n *= 2
    if not ladder:
        raise CliError("empty leaf ladder")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise CliError("leaf ladder must be strictly increasing")
    if any(n < 1 or n & (n - 1) for n in ladder):
        raise CliError("leaf ladder entries must be powers of two")
    return ladder


def _load_tree(path) -> tuple[Omnitree, str]:
    try:
        return codec.decode_any(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _load_field(path, tree: Omnitree) -> np.ndarray:
    try:
        bits = codec.decode_field(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    if len(bits) != tree.leaf_count:
        raise CliError(f"field has {len(bits)} entries, tree has {tree.leaf_count} leaves")
    return bits


def _oracle(args, d: int | None = None):
    oracle = parse_shape(args.shape, time_rotate=args.time_rotate)
    if d is not None and oracle.d != d:
        raise CliError(f"shape {args.shape!r} has dimension {oracle.d}, tree has {d}")
    return oracle


def cmd_refine(args) -> int:
    oracle = _oracle(args)
    d = oracle.d
    n_g = args.n_g or default_n_g(d)
    threads = _threads(args)
    cfg = AdaptConfig(mode=args.mode, target_leaves=args.max_leaves, n_s=args.n_s,
                      n_g=n_g, seed=args.seed, threads=threads)
    result = adapt(oracle, cfg)
    tree = result.tree
    field = fill_data(tree, oracle, n_g, args.seed, threads=threads)
    blob = codec.encode_octree(tree) if args.mode == "octree" else codec.encode(tree)
    Path(args.tree_out).write_bytes(blob)
    Path(args.field_out).write_bytes(codec.encode_field(field))
    stats = node_stats(tree)
    report = codec.storage_report(tree)
    summary = {
        "shape": oracle.name, "mode": args.mode, "d": d, "seed": args.seed,
        "N": stats.leaves, "nodes": stats.nodes,
        "mean_leaf_depth": stats.mean_leaf_depth, "max_level": list(stats.max_level),
        "normalized": is_normalized(tree), "splits": result.splits,
        "tree_bits": report.tree_bits_octree if args.mode == "octree" else report.tree_bits_omnitree,
        "data_bits": report.data_bits, "status": result.status,
        "tree_out": str(args.tree_out), "field_out": str(args.field_out),
    }
    print(json.dumps(summary, sort_keys=True))
    if result.resolved:
        log.warning("shape perfectly resolved with %d leaves", stats.leaves)
        return EXIT_RESOLVED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tree, fmt = _load_tree(args.tree)
    field = _load_field(args.field, tree)
    oracle = _oracle(args, tree.d)
    n_e = args.n_e or default_n_e(tree.d)
    res = evaluate(tree, field, oracle, n_e, args.seed, mode=fmt, threads=_threads(args))
    print(res.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    ladder = _ladder(args)
    oracle = _oracle(args)
    d = oracle.d
    n_g = args.n_g or default_n_g(d)
    n_e = args.n_e or default_n_e(d)
    threads = _threads(args)
    rows = []
    for seed in _int_list(args.seeds):
        for mode in str(args.modes).split(","):
            mode = mode.strip()
            cfg = AdaptConfig(mode=mode, n_s=args.n_s, n_g=n_g, seed=seed, threads=threads)
            cache: dict = {}
            results = []
            for snap in adapt_ladder(oracle, cfg, ladder):
                field = fill_data(snap.tree, oracle, n_g, seed, threads=threads, cache=cache)
                results.append(evaluate(snap.tree, field, oracle, n_e, seed, mode=mode, threads=threads))
                log.info("%s %s seed=%d N=%d l1=%.6g", oracle.name, mode, seed,
                         results[-1].N, results[-1].l1_error)
            rows.extend(sweep_rows(oracle.name, mode, d, results))
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _box_obj(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    corners = np.array([[hi[j] if (k >> j) & 1 else lo[j] for j in range(3)] for k in range(8)])
    # two triangles per face, corners indexed by bit pattern (x, y, z)
    faces = np.array([
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],  # z faces
        [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],  # y faces
        [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],  # x faces
    ])
    return corners, faces


def export_obj(tree: Omnitree, field, slice_time: float | None = None) -> str:
    lo, hi = tree.leaf_bounds()
    keep = np.asarray(field).astype(bool)
    if tree.d == 4:
        if slice_time is None:
            raise CliError("4-d trees need --slice-time for obj export")
        if not 0.0 <= slice_time <= 1.0:
            raise CliError("--slice-time must lie in [0, 1]")
        in_slice = (lo[:, 3] <= slice_time) & ((slice_time < hi[:, 3]) | (hi[:, 3] == 1.0))
        keep &= in_slice
        lo, hi = lo[:, :3], hi[:, :3]
    elif tree.d != 3:
        raise CliError(f"obj export needs a 3-d tree (or 4-d with --slice-time), got d={tree.d}")
    lines = [f"# {int(keep.sum())} filled leaves"]
    offset = 1
    for k in np.flatnonzero(keep):
        verts, faces = _box_obj(lo[k], hi[k])
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
        lines += [f"f {a + offset} {b + offset} {c + offset}" for a, b, c in faces.tolist()]
        offset += len(verts)
    return "\n".join(lines) + "\n"


def export_csv(tree: Omnitree, field) -> str:
    d = tree.d
    header = [f"i{j}" for j in range(d)] + [f"l{j}" for j in range(d)] + ["bit"]
    rows = [",".join(header)]
    for i, l, b in zip(tree.leaf_indices().tolist(), tree.leaf_levels().tolist(), np.asarray(field).tolist()):
        rows.append(",".join(map(str, [*i, *l, int(b)])))
    return "\n".join(rows) + "\n"


def cmd_export(args) -> int:
    tree, _ = _load_tree(args.tree)
    field = _load_field(args.field, tree)
    text = export_obj(tree, field, args.slice_time) if args.format == "obj" else export_csv(tree, field)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def inspect_text(tree: Omnitree, fmt: str) -> str:
    stats = node_stats(tree)
    report = codec.storage_report(tree)
    bits = report.tree_bits_octree if fmt == "octree" else report.tree_bits_omnitree
    nodes = "1 node" if stats.nodes == 1 else f"{stats.nodes} nodes"
    leaves = "1 leaf" if stats.leaves == 1 else f"{stats.leaves} leaves"
    norm = "normalized" if is_normalized(tree) else "not normalized"
    lines = [
        f"{nodes}, {leaves}, {norm}, {bits} tree bits",
        f"format: {fmt}, d = {tree.d}",
        f"mean leaf depth: {stats.mean_leaf_depth:.4f}",
        f"max level per dimension: {list(stats.max_level)}",
        f"storage: omnitree coding {report.tree_bits_omnitree} bits, "
        f"octree coding {report.tree_bits_octree if report.tree_bits_octree is not None else 'n/a'} bits, "
        f"data {report.data_bits} bits",
        f"split histogram: {split_histogram(tree)}",
    ]
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    tree, fmt = _load_tree(args.tree)
    print(inspect_text(tree, fmt))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file with option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (fallback: $OMNITREE_THREADS, else 1); never changes results")
    common.add_argument("-v", "--verbose", action="count", default=0)

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--shape", default=None,
                       help="cube | sphere | tetrahedron | rod | halfspace:<axis>:<c> | mesh:<path>")
    shape.add_argument("--time-rotate", action="store_true", help="add time as a 4th dimension")

    p = argparse.ArgumentParser(prog="omnitree", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("refine", parents=[common, shape], help="adapt a tree to a shape and store it")
    r.add_argument("--mode", choices=["omnitree", "octree"], default="omnitree")
    r.add_argument("--max-leaves", type=int, default=1024)
    r.add_argument("--n-s", type=int, default=512)
    r.add_argument("--n-g", type=int, default=None)
    r.add_argument("--tree-out", default="tree.omni")
    r.add_argument("--field-out", default="field.omng")
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("evaluate", parents=[common, shape], help="L1 error and storage of stored artifacts")
    e.add_argument("--tree", default=None)
    e.add_argument("--field", default=None)
    e.add_argument("--n-e", type=int, default=None)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common, shape], help="error ladder as CSV")
    s.add_argument("--modes", default="omnitree,octree")
    s.add_argument("--ladder", default=None, help="comma separated powers of two")
    s.add_argument("--min-leaves", type=int, default=16)
    s.add_argument("--max-leaves", type=int, default=8192)
    s.add_argument("--seeds", default="0")
    s.add_argument("--n-s", type=int, default=512)
    s.add_argument("--n-g", type=int, default=None)
    s.add_argument("--n-e", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export", parents=[common], help="leaf geometry as obj or csv")
    x.add_argument("--tree", default=None)
    x.add_argument("--field", default=None)
    x.add_argument("--format", choices=["obj", "csv"], default="obj")
    x.add_argument("--slice-time", type=float, default=None)
    x.add_argument("--out", default=None)
    x.set_defaults(func=cmd_export)

    i = sub.add_parser("inspect", parents=[common], help="structure and storage summary")
    i.add_argument("tree")
    i.set_defaults(func=cmd_inspect)
    return p


# checked after --config is merged, so the file may supply them
_REQUIRED = {"refine": ["shape"], "evaluate": ["shape", "tree", "field"], "sweep": ["shape"],
             "export": ["tree", "field"], "inspect": []}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        for a in subparser._actions:
            if a.dest in values and isinstance(a, argparse._StoreTrueAction):
                values[a.dest] = values[a.dest].lower() in ("1", "true", "yes", "on")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    for name in _REQUIRED[args.command]:
        if getattr(args, name) is None:
            raise CliError(f"{args.command}: --{name.replace('_', '-')} is required")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"omnitree: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2), force=True)
    try:
        return args.func(args)
    except (CliError, ShapeError, MeshError, codec.CodecError, ValueError, OSError) as exc:
        print(f"omnitree: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
