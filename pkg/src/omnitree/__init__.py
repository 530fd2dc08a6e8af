"""Omnitrees: dyadic trees whose nodes bisect any subset of dimensions.

Octrees split every dimension at every node; omnitrees pick the split set per
node, which lets them follow anisotropic features with far fewer cells.
"""
from .codec import (CodecError, StorageReport, decode, decode_any, decode_field, decode_octree,
                    encode, encode_field, encode_octree, storage_report)
from .core import (MAX_LEVEL, Omnitree, Rectangle, TreeStructureError, child_ordinal, is_normalized,
                   leaf_rectangles, locate, locate_many, node_stats, normalize, singleton_tree,
                   split_histogram, tree_from_leaves)
from .driver import AdaptConfig, AdaptResult, adapt, adapt_ladder, fill_data
from .metrics import (EvalResult, convergence_rate, evaluate, halfspace_l1_error, information_density,
                      l1_error)
from .oracles import (Cube, Empty, HalfSpace, MeshShape, Rod, Sphere, Tetrahedron, TimeRotated,
                      parse_shape, rotate_time)
from .refinement import RefinementPlan, construct_new_tree, mark, refine, refine_leaf, sweep_down, sweep_up

__version__ = "0.1.0"
