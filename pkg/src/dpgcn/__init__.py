"""Dual-path graph convolution for node classification.

Connectivity convolution over the normalized adjacency, role-based topology
convolution over k-means structural roles, and per-layer attention fusion.
"""

from .graph import Graph, NormalizedAdjacency, build_graph, normalize_adjacency, spmm
from .roles import (RoleAssignment, StructFeatures, build_membership, build_threshold_adjacency,
                    discover_roles, extract_struct_features, kmeans)
from .model import DpGcnModel, ModelConfig, full_forward
from .trainer import TrainConfig, make_split, resample_weights, train
from .metrics import EvalReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "Graph", "NormalizedAdjacency", "build_graph", "normalize_adjacency", "spmm",
    "RoleAssignment", "StructFeatures", "build_membership", "build_threshold_adjacency",
    "discover_roles", "extract_struct_features", "kmeans",
    "DpGcnModel", "ModelConfig", "full_forward",
    "TrainConfig", "make_split", "resample_weights", "train",
    "EvalReport", "evaluate",
]
