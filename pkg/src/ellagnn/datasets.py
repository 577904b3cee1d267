"""Dataset builders: a synthetic homophilic text-attributed graph and raw Planetoid files."""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import TextAttributedGraph, from_edges, normalize_rows

_FILLER = (
    "data results paper approach system based using proposed performance analysis problem "
    "work method new present study show two general different set large describe framework"
).split()


def _class_vocab(c, size):
    return [f"topic{c}term{i}" for i in range(size)]


def make_synthetic_tag(num_nodes=200, num_classes=2, avg_degree=6.0, homophily=0.9, vocab_size=30,
                       split=(0.3, 0.2, 0.5), seed=0) -> TextAttributedGraph:
    """Homophilic graph whose texts mix class-specific terms with shared filler.

    Text length varies widely (a few nodes get almost no class terms), so
    the text-length heuristic has something to find and message passing has
    something to fix. ``homophily`` is the probability an edge stays within a class.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    rng.shuffle(labels)
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
    num_edges = int(round(avg_degree * num_nodes / 2))
    edges = []
    while len(edges) < num_edges:
        u = int(rng.integers(num_nodes))
        if rng.random() < homophily or num_classes == 1:
            pool = by_class[labels[u]]
        else:
            other = rng.choice([c for c in range(num_classes) if c != labels[u]])
            pool = by_class[other]
        v = int(rng.choice(pool))
        if u != v:
            edges.append((u, v))
    texts = []
    for i in range(num_nodes):
        vocab = _class_vocab(labels[i], vocab_size)
        n_class = int(rng.choice([0, 1, 2, 4, 8, 12], p=[0.05, 0.1, 0.15, 0.25, 0.25, 0.2]))
        n_fill = int(rng.integers(2, 10))
        words = list(rng.choice(vocab, size=n_class)) + list(rng.choice(_FILLER, size=n_fill))
        rng.shuffle(words)
        title = " ".join(words[: max(1, len(words) // 3)])
        abstract = " ".join(words[max(1, len(words) // 3):])
        texts.append(f"{title}\n{abstract}".strip())
    perm = rng.permutation(num_nodes)
    n_train = int(round(split[0] * num_nodes))
    n_val = int(round(split[1] * num_nodes))
    tags = np.empty(num_nodes, dtype="<U5")
    tags[perm[:n_train]] = "train"
    tags[perm[n_train:n_train + n_val]] = "val"
    tags[perm[n_train + n_val:]] = "test"
    return from_edges(edges, texts, labels, tags, num_classes=num_classes)


# -- Planetoid (Cora / CiteSeer / PubMed raw ``ind.*`` files) -----------------

def _unpickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def load_planetoid(root, name="cora"):
    """Read the raw ``ind.<name>.*`` files with the standard public split.

    Returns ``(graph, features)``: train = the first ``len(y)`` nodes, val =
    the next 500, test = ``test.index``, everything else ``unlabeled``.
    Features are the bag-of-words rows scaled to unit length. Texts are empty
    because these files carry none.
    """
    root = Path(root)
    name = name.lower()
    parts = {k: _unpickle(root / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(line) for line in (root / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)
    feats = sp.vstack([sp.csr_matrix(parts["allx"]), sp.csr_matrix(parts["tx"])]).toarray()
    labels_1h = np.vstack([parts["ally"], parts["ty"]])
    # test rows are stored sorted; put them back at their node ids
    feats[test_index, :] = feats[test_sorted, :]
    labels_1h[test_index, :] = labels_1h[test_sorted, :]
    n = feats.shape[0]
    labels = labels_1h.argmax(axis=1)
    n_train = len(parts["y"])
    tags = np.full(n, "unlabeled", dtype="<U9")
    tags[:n_train] = "train"
    tags[n_train:n_train + 500] = "val"
    tags[test_index] = "test"
    edges = [(u, v) for u, nbrs in parts["graph"].items() for v in nbrs if u < n and v < n]
    graph = from_edges(edges, [""] * n, labels, tags, num_classes=labels_1h.shape[1])
    return graph, normalize_rows(feats.astype(np.float64))
