"""On-demand text enhancement gated by candidate set, probability and budget."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import _random
from ..graph import neighbors
from ..selection import CandidateSet
from .clients import EmbeddingError, LLMError, call_llm, embed_text
from .prompts import PromptCatalog, render_prompt
from .store import BudgetLedger, EnhancementCache, EnhancementRecord, prompt_hash

log = logging.getLogger(__name__)

_CALL_ERRORS = (LLMError, OSError, TimeoutError)


@dataclass(frozen=True)
class EnhancementPolicy:
    p: float
    candidate_set: CandidateSet
    enhance_query_nodes: bool = True

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("enhancement probability p must lie in [0, 1]")


@dataclass
class _Plan:
    node: int
    text: str
    template_id: str
    messages: list
    key: tuple


def _draw_template(node, policy, catalog, rng):
    """Gate on membership and ``p``; on success pick an arity-1 template uniformly."""
    if node not in policy.candidate_set:
        return None
    if rng.random() >= policy.p:
        return None
    templates = catalog.single()
    return templates[int(rng.integers(len(templates)))]


def _plan(node, text, policy, catalog, rng):
    template = _draw_template(node, policy, catalog, rng)
    if template is None:
        return None
    messages = render_prompt(template, [text])
    key = (int(node), template.id, prompt_hash(messages[-1]["content"]))
    return _Plan(int(node), text, template.id, messages, key)


def _finish(plan, reply, ledger, embedder, cache, stats):
    """Book-keep one completed call. Returns the stored record or None on fallback."""
    if isinstance(reply, BaseException):
        ledger.release()
        stats["llm_failures"] += 1
        log.warning("LLM call for node %d failed (%s); using original text", plan.node, reply)
        return None
    ledger.commit()
    stats["llm_calls"] += 1
    try:
        emb = embed_text(embedder, reply)
    except EmbeddingError as exc:
        # the call is already paid for; only the record is dropped
        stats["embed_failures"] += 1
        log.warning("embedding enhanced text for node %d failed (%s); using original", plan.node, exc)
        return None
    record = EnhancementRecord(plan.node, plan.template_id, plan.key[2], reply, emb)
    cache.put(record)
    return cache.get(plan.key)


def maybe_enhance(node, text, policy, ledger, catalog, llm, embedder, cache, rng, x=None,
                  llm_params=None, stats=None):
    """Return ``(text, embedding, enhanced)`` for one node.

    Unchanged ``(text, x, False)`` when the node is not a candidate, the
    ``p``-gate closes, the ledger refuses, or the LLM/embedder fails. Cache
    hits are free; a miss costs exactly one ledger unit.
    """
    stats = Counter() if stats is None else stats
    plan = _plan(node, text, policy, catalog, rng)
    if plan is None:
        return text, x, False
    hit = cache.get(plan.key)
    if hit is not None:
        stats["cache_hits"] += 1
        return hit.output_text, hit.embedding, True
    with cache.claim(plan.key):
        hit = cache.get(plan.key)
        if hit is not None:
            stats["cache_hits"] += 1
            return hit.output_text, hit.embedding, True
        if not ledger.reserve():
            stats["budget_denied"] += 1
            return text, x, False
        try:
            reply = call_llm(llm, plan.messages, llm_params)
        except _CALL_ERRORS as exc:
            reply = exc
        record = _finish(plan, reply, ledger, embedder, cache, stats)
    if record is None:
        return text, x, False
    return record.output_text, record.embedding, True


class Enhancer:
    """Bundles policy, clients and state for enhancement inside a training run.

    Randomness for node ``v`` in epoch ``e`` comes from a stream keyed by
    ``(run_seed, e, v)``, so the set of enhanced nodes does not depend on batch
    composition or thread scheduling. Budget is reserved in ascending node order
    before calls are dispatched with up to ``max_inflight`` in parallel.
    """

    def __init__(self, policy: EnhancementPolicy, catalog: PromptCatalog | None, llm, embedder,
                 ledger: BudgetLedger | None = None, cache: EnhancementCache | None = None,
                 run_seed=0, max_inflight=1, llm_params=None):
        self.policy = policy
        self.catalog = catalog if catalog is not None else PromptCatalog.default()
        self.llm = llm
        self.embedder = embedder
        self.ledger = ledger if ledger is not None else BudgetLedger()
        self.cache = cache if cache is not None else EnhancementCache()
        self.run_seed = run_seed
        self.max_inflight = max(1, int(max_inflight))
        self.llm_params = llm_params
        self.stats = Counter()

    def rng(self, node, epoch):
        return _random.keyed_generator(_random.ENHANCE, self.run_seed, epoch, node)

    def maybe_enhance(self, node, text, x=None, epoch=0):
        return maybe_enhance(node, text, self.policy, self.ledger, self.catalog, self.llm,
                             self.embedder, self.cache, self.rng(node, epoch), x=x,
                             llm_params=self.llm_params, stats=self.stats)

    def enhance(self, nodes, texts, epoch=0) -> dict:
        """Resolve a set of nodes; returns ``{node: embedding}`` for the enhanced ones."""
        out = {}
        misses = []
        for node in np.unique(np.asarray(nodes, dtype=np.int64)).tolist():
            if node not in self.policy.candidate_set:
                continue
            plan = _plan(node, texts[node], self.policy, self.catalog, self.rng(node, epoch))
            if plan is None:
                continue
            hit = self.cache.get(plan.key)
            if hit is not None:
                self.stats["cache_hits"] += 1
                out[node] = hit.embedding
                continue
            if not self.ledger.reserve():
                self.stats["budget_denied"] += 1
                continue
            misses.append(plan)
        if not misses:
            return out
        replies = self._dispatch(misses)
        for plan, reply in zip(misses, replies):
            record = _finish(plan, reply, self.ledger, self.embedder, self.cache, self.stats)
            if record is not None:
                out[plan.node] = record.embedding
        return out

    def _call(self, plan):
        try:
            return call_llm(self.llm, plan.messages, self.llm_params)
        except _CALL_ERRORS as exc:
            return exc

    def _dispatch(self, plans):
        if self.max_inflight == 1 or len(plans) == 1:
            return [self._call(p) for p in plans]
        with ThreadPoolExecutor(max_workers=self.max_inflight) as pool:
            return list(pool.map(self._call, plans))


def _pair_partner(graph, node, features):
    nbrs = neighbors(graph, node)
    if len(nbrs) == 0:
        return None
    if features is None:
        return int(nbrs[0])
    sims = features[nbrs] @ features[node]
    return int(nbrs[np.lexsort((nbrs, -sims))[0]])


def populate_cache(graph, candidate_set, catalog, llm, embedder, ledger, cache, template_ids=None,
                   pairwise=False, features=None, max_inflight=1, llm_params=None):
    """Pre-compute enhancements for every candidate x template, skipping cached keys.

    With ``pairwise`` only arity-2 templates are used and each candidate is
    paired with its most similar graph neighbour (lowest id without features).
    Returns a ``Counter`` with ``llm_calls``, ``cache_hits``, ``llm_failures``,
    ``embed_failures``, ``budget_denied`` and ``skipped``.
    """
    stats = Counter()
    pool = catalog.pairwise() if pairwise else catalog.single()
    if template_ids is not None:
        pool = tuple(t for t in pool if t.id in set(template_ids))
    plans = []
    for node in candidate_set.node_ids:
        for template in pool:
            if template.arity == 2:
                partner = _pair_partner(graph, node, features)
                if partner is None:
                    stats["skipped"] += 1
                    continue
                texts = [graph.texts[node], graph.texts[partner]]
            else:
                texts = [graph.texts[node]]
            messages = render_prompt(template, texts)
            key = (int(node), template.id, prompt_hash(messages[-1]["content"]))
            if key in cache:
                stats["cache_hits"] += 1
                continue
            if not ledger.reserve():
                stats["budget_denied"] += 1
                continue
            plans.append(_Plan(int(node), texts[0], template.id, messages, key))

    def call(plan):
        try:
            return call_llm(llm, plan.messages, llm_params)
        except _CALL_ERRORS as exc:
            return exc

    if max_inflight > 1 and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=max_inflight) as ex:
            replies = list(ex.map(call, plans))
    else:
        replies = [call(p) for p in plans]
    for plan, reply in zip(plans, replies):
        _finish(plan, reply, ledger, embedder, cache, stats)
    return stats
