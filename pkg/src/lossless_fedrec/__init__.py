"""Federated LightGCN training that reproduces centralized training exactly.

The package pairs a simulated server/client protocol (encrypted embedding
exchange, tag-based neighbour discovery, secret-shared gradient
aggregation) with a centralized full-graph trainer that serves as its
oracle.
"""

from .engine import RngStream, TrainConfig
from .graph import ExpandedSubgraph, InteractionGraph, build_graph, derive_expanded_subgraph
from .reference import ParamSnapshot, centralized_predict, centralized_train

__all__ = [
    "ExpandedSubgraph",
    "InteractionGraph",
    "ParamSnapshot",
    "RngStream",
    "TrainConfig",
    "build_graph",
    "centralized_predict",
    "centralized_train",
    "derive_expanded_subgraph",
]

__version__ = "0.1.0"
