"""Budgeted LLM text enhancement for GNN node classification on text-attributed graphs."""

from .estimators import ELLaGNNClassifier, NodeSelector
from .graph import TextAttributedGraph, from_edges, load_graph, read_features, save_graph, write_features
from .selection import CandidateSet

__all__ = [
    "CandidateSet",
    "ELLaGNNClassifier",
    "NodeSelector",
    "TextAttributedGraph",
    "from_edges",
    "load_graph",
    "read_features",
    "save_graph",
    "write_features",
]
__version__ = "0.1.0"
