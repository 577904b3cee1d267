"""Mean-aggregation message passing with hand-written gradients.

Layer ``l`` computes, for every centre ``v`` of its frontier::

    h_v = relu(W_l^T mean({h_u : u in N_K(v)} + {h_v}) + b_l)

with the ReLU omitted on the last layer. No residuals, no normalisation.
Training swaps in LLM-enhanced feature rows for the nodes a batch drew for
enhancement; evaluation and ``predict`` only ever read the original rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import _random
from .enhance.clients import LLM_CALLS
from .metrics import accuracy, gradient_flow
from .sampler import Blocks, SamplerConfig, build_blocks

log = logging.getLogger(__name__)

# epoch slot used to key sampling at inference time
INFERENCE_EPOCH = 0xFFFFFFFF


@dataclass
class TrainConfig:
    num_layers: int = 2
    hidden_dim: int = 256
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 300
    batch_size: int = 512
    seed: int = 0
    optimizer: str = "adam"
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_dim, epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


class ModelParameters:
    """Per-layer ``(W, b)`` with ``W`` of shape ``(in_dim, out_dim)``."""

    def __init__(self, layers):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in layers]
        for (W, b), nxt in zip(self.layers, self.layers[1:] + [None]):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError("each layer needs W (in, out) and b (out,)")
            if nxt is not None and nxt[0].shape[0] != W.shape[1]:
                raise ValueError("layer shapes do not chain")

    @classmethod
    def glorot(cls, dims, seed=0):
        rng = _random.keyed_generator(_random.INIT, seed)
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def dims(self):
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    def copy(self):
        return ModelParameters([(W.copy(), b.copy()) for W, b in self.layers])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in self.layers)


def layer_dims(in_dim, hidden_dim, num_classes, num_layers):
    return [in_dim] + [hidden_dim] * (num_layers - 1) + [num_classes]


# -- forward / backward -------------------------------------------------------

def aggregation_matrices(blocks: Blocks):
    """Row-normalised sparse mean operators, first layer first.

    Layer ``l`` (1-based) maps rows of ``frontiers[L - l + 1]`` to rows of
    ``frontiers[L - l]`` using the hop-``(L - l + 1)`` neighbourhoods.
    """
    L = blocks.num_hops
    mats = []
    for layer in range(1, L + 1):
        out_ids = blocks.frontiers[L - layer]
        in_ids = blocks.frontiers[L - layer + 1]
        batches = blocks.hops[L - layer]
        rows, cols, vals = [], [], []
        for r, v in enumerate(out_ids.tolist()):
            members = np.concatenate([[v], batches[v].ranked_neighbors])
            rows.append(np.full(len(members), r))
            cols.append(np.searchsorted(in_ids, members))
            vals.append(np.full(len(members), 1.0 / len(members)))
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(out_ids), len(in_ids)),
        )
        mats.append(mat)
    return mats


def _dropout_mask(key, layer, node_ids, width, rate):
    keep = _random.keyed_uniform(tuple(key) + (layer,), node_ids, width) >= rate
    return keep / (1.0 - rate)


def forward(params: ModelParameters, blocks: Blocks, features, training=False, dropout_rate=0.0,
            dropout_key=(0,), inputs=None):
    """Logits for ``blocks.seeds`` (sorted) and the activations needed by ``backward``.

    ``inputs`` overrides the first-layer rows (aligned with the last frontier);
    otherwise they are read from ``features``. Dropout masks are keyed by node
    id, so a node's output does not depend on its position in the batch.
    """
    L = params.num_layers
    if blocks.num_hops != L:
        raise ValueError(f"blocks have {blocks.num_hops} hops, model has {L} layers")
    h = features[blocks.frontiers[L]] if inputs is None else inputs
    mats = aggregation_matrices(blocks)
    cache = []
    for layer, ((W, b), agg) in enumerate(zip(params.layers, mats), 1):
        mask = None
        if training and dropout_rate > 0:
            mask = _dropout_mask(dropout_key, layer, blocks.frontiers[L - layer + 1], h.shape[1], dropout_rate)
            h = h * mask
        m = agg @ h
        z = m @ W + b
        cache.append((agg, mask, m, z))
        h = np.maximum(z, 0.0) if layer < L else z
    return h, cache


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, targets):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(targets)), targets]))


def backward(params: ModelParameters, cache, dlogits, weight_decay=0.0):
    """Per-layer ``(dW, db)`` given the gradient w.r.t. the logits."""
    grads = [None] * params.num_layers
    dz = dlogits
    for idx in range(params.num_layers - 1, -1, -1):
        W, _ = params.layers[idx]
        agg, mask, m, z = cache[idx]
        if idx < params.num_layers - 1:
            dz = dz * (z > 0)
        grads[idx] = (m.T @ dz + weight_decay * W, dz.sum(axis=0))
        if idx > 0:
            dh = agg.T @ (dz @ W.T)
            if mask is not None:
                dh = dh * mask
            dz = dh
    return grads


def loss_and_gradients(params: ModelParameters, blocks: Blocks, features, labels, weight_decay=0.0,
                       training=False, dropout_rate=0.0, dropout_key=(0,), inputs=None):
    """Mean cross-entropy over the seeds plus ``weight_decay / 2 * sum ||W||^2``.

    Returns ``(loss, grads, logits)``; ``grads`` is a list of ``(dW, db)``.
    """
    logits, cache = forward(params, blocks, features, training, dropout_rate, dropout_key, inputs)
    targets = np.asarray(labels)[blocks.seeds]
    decay = 0.5 * weight_decay * sum(float(np.sum(W * W)) for W, _ in params.layers)
    loss = cross_entropy(logits, targets) + decay
    dlogits = softmax(logits)
    dlogits[np.arange(len(targets)), targets] -= 1.0
    dlogits /= len(targets)
    return loss, backward(params, cache, dlogits, weight_decay), logits


# -- optimisation -------------------------------------------------------------

def optimizer_step(params: ModelParameters, grads, state: dict, cfg: TrainConfig,
                   beta1=0.9, beta2=0.999, eps=1e-8) -> ModelParameters:
    """One SGD or Adam update. ``state`` is mutated to carry Adam moments."""
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        return ModelParameters([(W - lr * dW, b - lr * db) for (W, b), (dW, db) in zip(params.layers, grads)])
    t = state.get("t", 0) + 1
    state["t"] = t
    flat_p = [p for layer in params.layers for p in layer]
    flat_g = [g for layer in grads for g in layer]
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in flat_p]
        state["v"] = [np.zeros_like(p) for p in flat_p]
    out = []
    for i, (p, g) in enumerate(zip(flat_p, flat_g)):
        state["m"][i] = beta1 * state["m"][i] + (1 - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1 - beta2) * g * g
        m_hat = state["m"][i] / (1 - beta1 ** t)
        v_hat = state["v"][i] / (1 - beta2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return ModelParameters(list(zip(out[0::2], out[1::2])))


# -- training -----------------------------------------------------------------

class _BatchFeatures:
    """Feature rows for one batch, with enhanced rows swapped in as they are drawn."""

    def __init__(self, features, enhancer, texts, epoch):
        self.features = features
        self.enhancer = enhancer
        self.texts = texts
        self.epoch = epoch
        self.resolved = set()
        self.overrides = {}

    def resolve(self, nodes):
        todo = [n for n in np.asarray(nodes).tolist() if n not in self.resolved]
        if not todo or self.enhancer is None:
            return
        self.resolved.update(todo)
        self.overrides.update(self.enhancer.enhance(todo, self.texts, epoch=self.epoch))

    def rows(self, nodes):
        out = self.features[nodes]
        if self.overrides:
            for i, n in enumerate(np.asarray(nodes).tolist()):
                vec = self.overrides.get(n)
                if vec is not None:
                    out[i] = vec
        return out

    def query_rows(self, centres):
        self.resolve(centres)
        return self.rows(centres)


@dataclass
class TrainResult:
    params: ModelParameters
    history: list
    best_epoch: int
    best_val_acc: float | None
    original_rows: int = 0
    enhanced_rows: int = 0


def _ranked_nodes(blocks):
    parts = [b.ranked_neighbors for hop in blocks.hops for b in hop.values()]
    return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)


def train(graph, features, cfg: TrainConfig, sampler_cfg: SamplerConfig | None = None, enhancer=None,
          on_epoch=None, eval_nodes=None) -> TrainResult:
    """Mini-batch training over the train split; keeps the best-validation parameters.

    Per batch: build ranked neighbourhoods (re-ranking with enhanced query
    rows when the enhancer allows it), enhance drawn neighbours, then one
    forward/backward/optimizer step. ``on_epoch(record)`` receives each
    metrics record. Without an enhancer this is the plain baseline trainer.
    """
    features = np.asarray(features, dtype=np.float64)
    if sampler_cfg is None:
        sampler_cfg = SamplerConfig(num_hops=cfg.num_layers)
    if sampler_cfg.num_hops != cfg.num_layers:
        raise ValueError("sampler num_hops must equal num_layers")
    dims = layer_dims(features.shape[1], cfg.hidden_dim, graph.num_classes, cfg.num_layers)
    params = ModelParameters.glorot(dims, cfg.seed)
    state = {}
    train_nodes = graph.nodes_in("train")
    if len(train_nodes) == 0:
        raise ValueError("graph has no training nodes")
    val_nodes = graph.nodes_in("val") if eval_nodes is None else np.asarray(eval_nodes)
    query_enhanced = enhancer is not None and enhancer.policy.enhance_query_nodes

    history = []
    best = (None, -1, params.copy())
    original_rows = enhanced_rows = 0
    calls_before = enhancer.stats["llm_calls"] if enhancer is not None else 0
    for epoch in range(cfg.epochs):
        epoch_calls0 = enhancer.stats["llm_calls"] if enhancer is not None else 0
        order = _random.keyed_generator(_random.SHUFFLE, cfg.seed, epoch).permutation(train_nodes)
        total_loss, norms_sum, batches, epoch_enhanced = 0.0, None, 0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            view = _BatchFeatures(features, enhancer, graph.texts, epoch)
            blocks = build_blocks(graph, batch, sampler_cfg, features, cfg.seed, epoch,
                                  query_rows=view.query_rows if query_enhanced else None)
            inputs_ids = blocks.frontiers[-1]
            if enhancer is not None:
                view.resolve(_ranked_nodes(blocks))
            inputs = view.rows(inputs_ids)
            n_enh = sum(1 for n in inputs_ids.tolist() if n in view.overrides)
            epoch_enhanced += n_enh
            enhanced_rows += n_enh
            original_rows += len(inputs_ids) - n_enh
            loss, grads, _ = loss_and_gradients(
                params, blocks, features, graph.labels, cfg.weight_decay, training=True,
                dropout_rate=cfg.dropout_rate, dropout_key=(_random.DROPOUT, cfg.seed, epoch), inputs=inputs,
            )
            report = gradient_flow(grads)
            norms = np.asarray(report.per_layer_norms)
            norms_sum = norms if norms_sum is None else norms_sum + norms
            total_loss += loss * len(batch)
            batches += 1
            params = optimizer_step(params, grads, state, cfg)
        mean_norms = norms_sum / batches
        val_acc = None
        if len(val_nodes):
            pred = predict(params, graph, features, sampler_cfg, seed=cfg.seed, nodes=val_nodes)
            val_acc = accuracy(pred, graph.labels[val_nodes])
        calls_total = (enhancer.stats["llm_calls"] - calls_before) if enhancer is not None else 0
        record = {
            "epoch": epoch,
            "loss": total_loss / len(order),
            "val_acc": val_acc,
            "gf": float(mean_norms.mean()),
            "grad_norms": [float(v) for v in mean_norms],
            "llm_calls_epoch": (enhancer.stats["llm_calls"] - epoch_calls0) if enhancer is not None else 0,
            "llm_calls_total": calls_total,
            "enhanced_nodes": epoch_enhanced,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        score = val_acc if val_acc is not None else -record["loss"]
        if best[0] is None or score > best[0]:
            best = (score, epoch, params.copy())
    if not best[2].all_finite():
        raise FloatingPointError("training diverged: non-finite parameters")
    return TrainResult(best[2], history, best[1], best[0] if len(val_nodes) else None,
                       original_rows, enhanced_rows)


def format_metrics(record) -> str:
    return json.dumps(record, sort_keys=False)


# -- inference ----------------------------------------------------------------

def predict_logits(params: ModelParameters, graph, features, sampler_cfg: SamplerConfig, seed=0, nodes=None,
                   batch_size=1024, enhancer=None):
    """Logits for ``nodes`` (default: test split) in the order given.

    With ``enhancer=None`` this is the LLM-free path: original feature rows,
    original query vectors, and a hard check that no LLM call happened.
    Passing an enhancer gives the LLM-incorporated variant used for comparison.
    """
    features = np.asarray(features, dtype=np.float64)
    if sampler_cfg.num_hops != params.num_layers:
        sampler_cfg = SamplerConfig(sampler_cfg.fanout, sampler_cfg.top_k, params.num_layers)
    if features.shape[1] != params.dims[0]:
        raise ValueError(f"features have dim {features.shape[1]}, model expects {params.dims[0]}")
    nodes = graph.nodes_in("test") if nodes is None else np.asarray(nodes, dtype=np.int64)
    calls0 = LLM_CALLS.value
    out = np.zeros((len(nodes), params.dims[-1]))
    uniq, inverse = np.unique(nodes, return_inverse=True)
    logits_sorted = np.zeros((len(uniq), params.dims[-1]))
    query_enhanced = enhancer is not None and enhancer.policy.enhance_query_nodes
    for start in range(0, len(uniq), batch_size):
        chunk = uniq[start:start + batch_size]
        view = _BatchFeatures(features, enhancer, graph.texts, INFERENCE_EPOCH)
        blocks = build_blocks(graph, chunk, sampler_cfg, features, seed, INFERENCE_EPOCH,
                              query_rows=view.query_rows if query_enhanced else None)
        if enhancer is not None:
            view.resolve(_ranked_nodes(blocks))
        logits, _ = forward(params, blocks, features, inputs=view.rows(blocks.frontiers[-1]))
        logits_sorted[start:start + len(chunk)] = logits
    out[:] = logits_sorted[inverse]
    if enhancer is None and LLM_CALLS.value != calls0:
        raise RuntimeError("LLM-free inference issued LLM calls")
    return out


def predict(params, graph, features, sampler_cfg, seed=0, nodes=None, batch_size=1024, enhancer=None):
    return predict_logits(params, graph, features, sampler_cfg, seed, nodes, batch_size, enhancer).argmax(axis=1)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
