"""Fixed-size neighbourhoods: uniform fanout sample, then cosine re-rank to the top K."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _random
from .graph import TextAttributedGraph, neighbors


@dataclass(frozen=True)
class SamplerConfig:
    fanout: int = 25
    top_k: int = 5
    num_hops: int = 2

    def __post_init__(self):
        if not 1 <= self.top_k <= self.fanout:
            raise ValueError("need 1 <= top_k <= fanout")
        if self.num_hops < 1:
            raise ValueError("num_hops must be >= 1")


@dataclass(frozen=True)
class NeighborhoodBatch:
    center: int
    ranked_neighbors: np.ndarray
    similarity: np.ndarray


@dataclass(frozen=True)
class Blocks:
    """Layered neighbourhoods for ``num_hops`` rounds of message passing.

    ``frontiers[0]`` are the seeds; ``frontiers[h]`` adds the ranked neighbours
    of every centre in ``frontiers[h - 1]``. ``hops[h - 1]`` maps each centre of
    ``frontiers[h - 1]`` to its batch for hop ``h``. Frontiers are sorted.
    """

    seeds: np.ndarray
    frontiers: tuple
    hops: tuple

    @property
    def num_hops(self) -> int:
        return len(self.hops)


def uniform_sample(graph: TextAttributedGraph, node: int, fanout: int, rng: np.random.Generator) -> np.ndarray:
    nbrs = neighbors(graph, node)
    if len(nbrs) <= fanout:
        return nbrs.copy()
    picked = rng.choice(len(nbrs), size=fanout, replace=False)
    return nbrs[picked]


def rerank_topk(query_vec, candidates, features, k: int) -> NeighborhoodBatch:
    """Keep the ``k`` candidates most cosine-similar to ``query_vec``.

    Rows of ``features`` are unit length, so cosine is a dot product. Ties go
    to the smaller node id. ``center`` is left as -1 for the caller to fill.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return NeighborhoodBatch(-1, candidates, np.zeros(0))
    sims = features[candidates] @ np.asarray(query_vec, dtype=np.float64)
    order = np.lexsort((candidates, -sims))[:k]
    return NeighborhoodBatch(-1, candidates[order], sims[order])


def sample_neighborhood(graph, node, cfg: SamplerConfig, features, query_vec, run_seed, epoch, hop) -> NeighborhoodBatch:
    nbrs = neighbors(graph, node)
    if len(nbrs) <= cfg.fanout:
        sampled = nbrs
    else:
        rng = _random.keyed_generator(_random.SAMPLE, run_seed, epoch, node, hop)
        sampled = uniform_sample(graph, node, cfg.fanout, rng)
    batch = rerank_topk(query_vec, sampled, features, cfg.top_k)
    return NeighborhoodBatch(int(node), batch.ranked_neighbors, batch.similarity)


def build_blocks(graph, seed_nodes, cfg: SamplerConfig, features, run_seed=0, epoch=0, query_rows=None) -> Blocks:
    """Expand ``seed_nodes`` hop by hop into ranked neighbourhoods.

    ``query_rows(centres)`` returns the re-ranking query vectors for an array
    of centres (default: their own feature rows). Sampling for (centre, hop)
    is keyed by ``(run_seed, epoch, centre, hop)``, so results do not depend
    on seed order or on which other seeds share the batch.
    """
    seeds = np.unique(np.asarray(seed_nodes, dtype=np.int64))
    if len(seeds) and (seeds[0] < 0 or seeds[-1] >= graph.num_nodes):
        raise ValueError("seed node out of range")
    frontiers = [seeds]
    hops = []
    for hop in range(1, cfg.num_hops + 1):
        centres = frontiers[-1]
        queries = features[centres] if query_rows is None else query_rows(centres)
        batches = {}
        reached = [centres]
        for node, q in zip(centres.tolist(), queries):
            batch = sample_neighborhood(graph, node, cfg, features, q, run_seed, epoch, hop)
            batches[node] = batch
            reached.append(batch.ranked_neighbors)
        hops.append(batches)
        frontiers.append(np.unique(np.concatenate(reached)))
    return Blocks(seeds, tuple(frontiers), tuple(hops))
