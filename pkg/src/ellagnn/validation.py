"""Input checks shared by the estimators and the CLI."""

import numpy as np

from .graph import TextAttributedGraph, check_features


def check_graph(graph) -> TextAttributedGraph:
    if not isinstance(graph, TextAttributedGraph):
        raise TypeError(f"expected a TextAttributedGraph, got {type(graph).__name__}")
    return graph


def check_graph_features(graph, features):
    graph = check_graph(graph)
    return graph, check_features(features, graph.num_nodes)


def check_node_ids(nodes, num_nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if len(nodes) and (nodes.min() < 0 or nodes.max() >= num_nodes):
        raise ValueError(f"node ids must lie in [0, {num_nodes})")
    return nodes


def check_probability(p, name="p") -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p
