"""Storage of adapted trees: descriptor bits, data bits and information density.

For each shape and leaf budget, prints the omnitree (d bits per node) and
octree (1 bit per node) descriptor sizes next to the data vector size.
"""
import argparse

from omnitree.codec import storage_report
from omnitree.driver import AdaptConfig, adapt, default_n_g, fill_data
from omnitree.metrics import information_density
from omnitree.oracles import parse_shape


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shapes", nargs="+", default=["sphere", "tetrahedron", "rod"])
    p.add_argument("--budgets", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    print(f"{'shape':>12} {'mode':>8} {'N':>6} {'nodes':>6} {'tree bits':>9} {'data bits':>9} {'H':>6}")
    for shape in args.shapes:
        oracle = parse_shape(shape)
        for n in args.budgets:
            for mode in ("omnitree", "octree"):
                tree = adapt(oracle, AdaptConfig(mode=mode, target_leaves=n, seed=args.seed)).tree
                field = fill_data(tree, oracle, default_n_g(oracle.d), args.seed)
                rep = storage_report(tree)
                bits = rep.tree_bits_octree if mode == "octree" else rep.tree_bits_omnitree
                print(f"{shape:>12} {mode:>8} {tree.leaf_count:>6} {tree.node_count:>6} {bits:>9} "
                      f"{rep.data_bits:>9} {information_density(field):>6.3f}")


if __name__ == "__main__":
    main()
