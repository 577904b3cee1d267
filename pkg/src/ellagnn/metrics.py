"""Gradient flow, intra-class cosine similarity and accuracy."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientReport:
    per_layer_norms: tuple[float, ...]
    gf: float

    def to_dict(self):
        return {"per_layer_norms": list(self.per_layer_norms), "gf": self.gf}


def gradient_flow(grads) -> GradientReport:
    """Mean over layers of the L2 norm of each layer's flattened gradient.

    ``grads`` is a sequence of per-layer gradients; a layer may be a single
    array or a ``(dW, db)`` pair, in which case both are flattened together.
    """
    norms = []
    for layer in grads:
        parts = layer if isinstance(layer, (tuple, list)) else (layer,)
        sq = sum(float(np.sum(np.square(np.asarray(p, dtype=np.float64)))) for p in parts)
        norms.append(float(np.sqrt(sq)))
    gf = float(np.mean(norms)) if norms else 0.0
    return GradientReport(tuple(norms), gf)


@dataclass(frozen=True)
class ClassSimilarityReport:
    per_class: dict
    variant: str = "raw"

    def to_dict(self):
        return {"variant": self.variant, "per_class": {str(k): v for k, v in self.per_class.items()}}


def intra_class_cosine(features, labels, variant="raw") -> ClassSimilarityReport:
    """Mean pairwise cosine similarity within each class.

    Uses ``(||sum x||^2 - m) / (m (m - 1))`` on unit rows, which equals the
    mean over unordered pairs. Classes with fewer than two members are left out.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    per_class = {}
    for c in np.unique(labels).tolist():
        rows = features[labels == c]
        m = len(rows)
        if m < 2:
            log.info("class %s has %d member(s); omitted from intra-class similarity", c, m)
            continue
        total = rows.sum(axis=0)
        per_class[c] = float((total @ total - m) / (m * (m - 1)))
    return ClassSimilarityReport(per_class, variant)


def accuracy(pred, true, mask=None) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError("pred and true labels differ in length")
    if mask is None:
        mask = np.ones(len(true), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy over an empty mask is undefined")
    return float(np.mean(pred[mask] == true[mask]))
