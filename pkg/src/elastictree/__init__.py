"""Elastic shape analysis of 3D tree shapes and their growth over time.

Branches are compared through their square-root velocity functions, trees
through a recursive elastic metric optimized over rotation, branch
reparameterization and subtree correspondence, and growing trees as
trajectories in a PCA space of tree shapes compared up to a time warp.
"""

__version__ = "0.1.0"

from .errors import ElasticTreeError, NumericalError, TopologyMismatchError, ValidationError
from .tree import (
    BranchNode,
    NodeMatch,
    SrvfNode,
    SrvfTree,
    TreeShape,
    build_tree,
    devectorize,
    from_srvft,
    normalize,
    pad_to_union,
    to_srvft,
    validate_tree,
    vectorize,
)
from .registration import (
    MetricWeights,
    RegistrationResult,
    apply_registration,
    cycle_consistency_error,
    geodesic_3d,
    match_subtrees,
    register_pair,
    register_sequence,
    tree_distance_fixed,
)
from .subspace import (
    PcaBasis,
    PcaTrajectory,
    embed_sequence,
    fit_pca,
    karcher_mean_trees,
    project,
    reconstruct,
)
from .temporal import (
    TrajectorySrvf,
    cross_sequence_register,
    geodesic_4d,
    inverse_trajectory_srvf,
    optimal_time_warp,
    trajectory_srvf,
)
from .atlas import Atlas4D, fit_modes_4d, generate_4d, karcher_mean_4d, mode_trajectory
from .synth import GrowthSpec, TreeSpec, synth_growth, synth_time_warp, synth_tree
from .io import export_stats, load_sequence, load_skeleton, save_sequence, save_skeleton
from .config import RunConfig

__all__ = [
    "__version__",
    "ElasticTreeError",
    "NumericalError",
    "TopologyMismatchError",
    "ValidationError",
    "BranchNode",
    "NodeMatch",
    "SrvfNode",
    "SrvfTree",
    "TreeShape",
    "build_tree",
    "devectorize",
    "from_srvft",
    "normalize",
    "pad_to_union",
    "to_srvft",
    "validate_tree",
    "vectorize",
    "MetricWeights",
    "RegistrationResult",
    "apply_registration",
    "cycle_consistency_error",
    "geodesic_3d",
    "match_subtrees",
    "register_pair",
    "register_sequence",
    "tree_distance_fixed",
    "PcaBasis",
    "PcaTrajectory",
    "embed_sequence",
    "fit_pca",
    "karcher_mean_trees",
    "project",
    "reconstruct",
    "TrajectorySrvf",
    "cross_sequence_register",
    "geodesic_4d",
    "inverse_trajectory_srvf",
    "optimal_time_warp",
    "trajectory_srvf",
    "Atlas4D",
    "fit_modes_4d",
    "generate_4d",
    "karcher_mean_4d",
    "mode_trajectory",
    "GrowthSpec",
    "TreeSpec",
    "synth_growth",
    "synth_time_warp",
    "synth_tree",
    "export_stats",
    "load_sequence",
    "load_skeleton",
    "save_sequence",
    "save_skeleton",
    "RunConfig",
]
