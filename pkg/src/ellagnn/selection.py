"""Budgeted candidate selection: which nodes may be sent to the LLM.

Four structural/textual heuristics produce one score per node; a candidate
set is the first ``k`` nodes of a deterministic sort over those scores.
Every sort breaks ties by ascending node id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np
import scipy.sparse as sp

from .graph import TextAttributedGraph
from .text import tokenize

METHODS = ("pagerank", "cluster_density", "text_length", "degree", "combined")


@dataclass(frozen=True, eq=False)
class SelectionScores:
    method: str
    scores: np.ndarray
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown selection method {self.method!r}")


@dataclass(frozen=True)
class CandidateSet:
    node_ids: tuple[int, ...]
    method: str
    budget_k: int
    _members: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(int(i) for i in self.node_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("candidate set contains duplicate node ids")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "_members", frozenset(ids))

    def __contains__(self, node) -> bool:
        return int(node) in self._members

    def __len__(self) -> int:
        return len(self.node_ids)

    @classmethod
    def empty(cls, method="text_length"):
        return cls((), method, 0)

    def to_dict(self) -> dict:
        return {"method": self.method, "budget_k": self.budget_k, "node_ids": list(self.node_ids)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> CandidateSet:
        return cls(tuple(obj["node_ids"]), obj["method"], int(obj["budget_k"]))

    @classmethod
    def load(cls, path) -> CandidateSet:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def _ordered(scores: np.ndarray, descending: bool = False) -> np.ndarray:
    ids = np.arange(len(scores))
    key = -scores if descending else scores
    return np.lexsort((ids, key))


def _take(order, k, method) -> CandidateSet:
    if k < 0:
        raise ValueError("budget k must be non-negative")
    k = min(int(k), len(order))
    return CandidateSet(tuple(order[:k].tolist()), method, k)


# -- PageRank -----------------------------------------------------------------

def pagerank_scores(graph: TextAttributedGraph, damping=0.85, tol=1e-9, max_iter=200) -> SelectionScores:
    """Power iteration with uniform teleport; isolated nodes spread their mass uniformly.

    Non-convergence is reported through ``converged=False`` on the result,
    which still carries the last iterate.
    """
    n = graph.num_nodes
    if n == 0:
        raise ValueError("pagerank needs a non-empty graph")
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    deg = graph.degrees().astype(np.float64)
    dangling = deg == 0
    inv = np.divide(1.0, deg, out=np.zeros(n), where=~dangling)
    src = np.repeat(np.arange(n), graph.degrees())
    # column-stochastic: column j spreads node j's mass over its neighbors
    trans = sp.csr_matrix((inv[src], (graph.indices, src)), shape=(n, n))
    x = np.full(n, 1.0 / n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = damping * (trans @ x + x[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        delta = np.abs(nxt - x).sum()
        x = nxt
        if delta < tol:
            converged = True
            break
    return SelectionScores("pagerank", x, converged=converged, iterations=it)


def select_by_pagerank(scores: SelectionScores, k: int, direction="ascending") -> CandidateSet:
    if scores.method != "pagerank":
        raise ValueError("select_by_pagerank expects pagerank scores")
    if direction not in ("ascending", "descending"):
        raise ValueError("direction must be 'ascending' or 'descending'")
    return _take(_ordered(scores.scores, direction == "descending"), k, "pagerank")


# -- clustering distance ------------------------------------------------------

def _sq_dist(x, centroids):
    out = np.empty((len(x), len(centroids)))
    # bound the (chunk, k, dim) temporary to ~32 MB
    chunk = max(1, (1 << 22) // max(1, centroids.size))
    for start in range(0, len(x), chunk):
        block = x[start:start + chunk]
        out[start:start + chunk] = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return out


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a centre already; fall back to uniform
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dist(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, seed=0, max_iter=300):
    """Lloyd's algorithm from a k-means++ start.

    Returns ``(centroids, labels, objective_history)``. Iteration stops at an
    assignment fixpoint. A cluster that empties out is re-seeded at the point
    farthest from its own centroid (lowest id on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    if k < 1:
        raise ValueError("num_clusters must be >= 1")
    if len(x) == 0:
        raise ValueError("kmeans needs at least one point")
    k = min(k, len(x))
    centroids = kmeans_plus_plus(x, k, np.random.default_rng(seed))
    dist = _sq_dist(x, centroids)
    labels = dist.argmin(axis=1)
    history = [float(dist[np.arange(len(x)), labels].sum())]
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        for c in range(k):
            if not np.any(labels == c):
                own = dist[np.arange(len(x)), labels]
                far = int(np.argmax(own))
                centroids[c] = x[far]
                labels[far] = c
                dist[far] = _sq_dist(x[far:far + 1], centroids)[0]
        dist = _sq_dist(x, centroids)
        new_labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(len(x)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, labels, history


def cluster_density_scores(features, num_clusters: int, seed=0, max_iter=300) -> SelectionScores:
    """Density of belonging ``1 / (1 + d)`` with ``d`` the distance to the own centroid over the max distance."""
    features = np.asarray(features, dtype=np.float64)
    centroids, labels, history = kmeans(features, num_clusters, seed=seed, max_iter=max_iter)
    d = np.linalg.norm(features - centroids[labels], axis=1)
    top = d.max()
    if top > 0:
        d = d / top
    return SelectionScores("cluster_density", 1.0 / (1.0 + d), iterations=len(history) - 1)


def select_by_density(scores: SelectionScores, k: int) -> CandidateSet:
    return _take(_ordered(scores.scores), k, scores.method)


# -- text length --------------------------------------------------------------

def default_stopwords() -> frozenset:
    text = resources.files("ellagnn").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w for w in text.split() if w)


def load_stopwords(path) -> frozenset:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def content_word_count(text: str, stopwords) -> int:
    return sum(1 for tok in tokenize(text) if tok not in stopwords)


def text_length_scores(graph: TextAttributedGraph, stopwords=None) -> SelectionScores:
    if stopwords is None:
        stopwords = default_stopwords()
    counts = np.array([content_word_count(t, stopwords) for t in graph.texts], dtype=np.float64)
    return SelectionScores("text_length", counts)


def select_by_text_length(scores: SelectionScores, k: int) -> CandidateSet:
    return _take(_ordered(scores.scores), k, "text_length")


# -- degree -------------------------------------------------------------------

def degree_scores(graph: TextAttributedGraph) -> SelectionScores:
    return SelectionScores("degree", graph.degrees().astype(np.float64))


def percentile_count(percentile, n: int) -> int:
    if not 0 < percentile <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    # decimal semantics: 10% of 200 is 20, not 21 from float round-off
    return math.ceil(Fraction(str(percentile)) * n / 100)


def select_by_degree(graph: TextAttributedGraph, percentile) -> CandidateSet:
    k = percentile_count(percentile, graph.num_nodes)
    return _take(_ordered(degree_scores(graph).scores), k, "degree")


# -- combined -----------------------------------------------------------------

def minmax(scores: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to all zeros."""
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.zeros_like(scores, dtype=np.float64)
    return (scores - lo) / (hi - lo)


def combine_scores(pagerank: SelectionScores, density: SelectionScores, alpha: float) -> SelectionScores:
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if len(pagerank.scores) != len(density.scores):
        raise ValueError("score vectors differ in length")
    mixed = alpha * minmax(pagerank.scores) + (1 - alpha) * minmax(density.scores)
    return SelectionScores("combined", mixed)


def select_by_combined(scores: SelectionScores, k: int) -> CandidateSet:
    return _take(_ordered(scores.scores), k, "combined")
