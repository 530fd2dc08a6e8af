"""Convergence on an axis-aligned halfspace with the exact (analytic) L1 error.

The octree has to resolve the plane in every direction and converges like
N^(-1/(d-1)); the omnitree only splits the normal direction and halves its
error with every added leaf until the cut is resolved to float precision.
"""
import argparse

from omnitree.driver import AdaptConfig, adapt_ladder, fill_data
from omnitree.metrics import convergence_rate, halfspace_l1_error
from omnitree.oracles import HalfSpace


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--c", type=float, default=1 / 3)
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--max-leaves", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    hs = HalfSpace(args.c, axis=args.axis)
    ladder = [2 ** k for k in range(4, 20) if 2 ** k <= args.max_leaves]
    print("mode,N,l1_exact,rate,splits")
    for mode in ("omnitree", "octree"):
        prev = None
        for snap in adapt_ladder(hs, AdaptConfig(mode=mode, seed=args.seed), ladder):
            tree = snap.tree
            err = halfspace_l1_error(tree, fill_data(tree, hs, 4096, args.seed), args.c, args.axis)
            rate = ""
            if prev and tree.leaf_count > prev[0]:
                rate = f"{convergence_rate(prev[1], prev[0], err, tree.leaf_count):.3f}"
            print(f"{mode},{tree.leaf_count},{err:.6e},{rate},{'/'.join(map(str, snap.splits))}")
            prev = (tree.leaf_count, err)


if __name__ == "__main__":
    main()
