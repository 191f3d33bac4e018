"""Elastic spatiotemporal analysis of tree-like 4D shapes."""

from .basis import TreeShapeBasis, TreeShapePca, fit_basis, project, reconstruct
from .esrvf import (
    EsrvfBranch,
    EsrvfTree,
    apply_reparam,
    apply_rotation,
    esrvf_forward,
    esrvf_inverse,
    tree_forward,
    tree_inverse,
)
from .metric import (
    Matching,
    MetricWeights,
    NodeMap,
    RegistrationMap,
    apply_map,
    branch_dist_sq,
    complete_pair,
    geodesic,
    subtree_normsq,
    tree_dist_sq_aligned,
    tree_dist_sq_congruent,
)
from .powertransform import yj_forward, yj_inverse
from .spatreg import (
    RegistrationOptions,
    match_subtrees,
    optimal_reparam_branch,
    optimal_rotation,
    register_sequence,
    register_trees,
)
from .stats import (
    Trajectory4DModel,
    karcher_mean_trajectories,
    karcher_mean_trees,
    modes_of_variation,
)
from .synthgen import GrowthSpec, gen_tree, gen_tree4d, random_diffeo, warp_tree4d
from .trajectory import (
    PcaTrajectory,
    TimeWarp,
    TrajectorySrvf,
    geodesic4d,
    pca_srvf,
    pca_srvf_inverse,
    spatiotemporal_pipeline,
    temporal_register,
)
from .treemodel import (
    Branch,
    Tree,
    Tree4D,
    TreeFormatError,
    export_mesh,
    normalize_scale,
    normalize_translation,
    parse_sequence,
    parse_tree,
    resample_branch,
    serialize_sequence,
    serialize_tree,
)
from .warps import Diffeo

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Diffeo",
    "EsrvfBranch",
    "EsrvfTree",
    "GrowthSpec",
    "Matching",
    "MetricWeights",
    "NodeMap",
    "PcaTrajectory",
    "RegistrationMap",
    "RegistrationOptions",
    "TimeWarp",
    "Trajectory4DModel",
    "TrajectorySrvf",
    "Tree",
    "Tree4D",
    "TreeFormatError",
    "TreeShapeBasis",
    "TreeShapePca",
    "apply_map",
    "apply_reparam",
    "apply_rotation",
    "branch_dist_sq",
    "complete_pair",
    "esrvf_forward",
    "esrvf_inverse",
    "export_mesh",
    "fit_basis",
    "gen_tree",
    "gen_tree4d",
    "geodesic",
    "geodesic4d",
    "karcher_mean_trajectories",
    "karcher_mean_trees",
    "match_subtrees",
    "modes_of_variation",
    "normalize_scale",
    "normalize_translation",
    "optimal_reparam_branch",
    "optimal_rotation",
    "parse_sequence",
    "parse_tree",
    "pca_srvf",
    "pca_srvf_inverse",
    "project",
    "random_diffeo",
    "reconstruct",
    "register_sequence",
    "register_trees",
    "resample_branch",
    "serialize_sequence",
    "serialize_tree",
    "spatiotemporal_pipeline",
    "subtree_normsq",
    "temporal_register",
    "tree_dist_sq_aligned",
    "tree_dist_sq_congruent",
    "tree_forward",
    "tree_inverse",
    "warp_tree4d",
    "yj_forward",
    "yj_inverse",
]
