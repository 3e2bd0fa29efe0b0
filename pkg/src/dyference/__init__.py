"""Time-varying probabilistic network inference from cascade infection times."""

__version__ = "0.1.0"

from .graph import Cascade, CascadeSet, DirectedEdge, EmptyInputError, GroundTruthNetwork, NodeTable
from .inference import InferenceConfig, dyference, update_network_model
from .mdnd import Hyperparams, MdndState
from .tree_dist import TreeDistribution, edge_marginals

__all__ = [
    "Cascade", "CascadeSet", "DirectedEdge", "EmptyInputError", "GroundTruthNetwork", "NodeTable",
    "InferenceConfig", "dyference", "update_network_model", "Hyperparams", "MdndState",
    "TreeDistribution", "edge_marginals", "__version__",
]
