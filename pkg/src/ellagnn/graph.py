"""Text-attributed graph storage: loading, validation, CSR access and feature files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test", "unlabeled")

FEATURES_MAGIC = b"ELGF"
FEATURES_VERSION = 1
_FEATURES_HEADER = struct.Struct("<4sIQI")


class GraphFormatError(ValueError):
    """A nodes/edges file could not be parsed. Carries the 1-based line number."""

    def __init__(self, path, lineno, msg):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


class GraphValidationError(ValueError):
    """Parsed content violates a graph invariant (id range, label range, gaps)."""


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """Undirected graph with one text, label and split tag per node.

    Adjacency is CSR without self-loops: ``indices[indptr[i]:indptr[i + 1]]``
    holds the strictly increasing neighbor ids of node ``i``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    texts: tuple[str, ...]
    labels: np.ndarray
    split: np.ndarray
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def mask(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return self.split == name

    def nodes_in(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.mask(name))

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as rows ``(u, v)`` with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    def validate(self) -> None:
        n = self.num_nodes
        indptr, indices = self.indptr, self.indices
        if indptr[0] != 0 or np.any(np.diff(indptr) < 0) or indptr[-1] != len(indices):
            raise GraphValidationError("CSR offsets must start at 0, be non-decreasing and end at nnz")
        if len(indices) % 2:
            raise GraphValidationError("odd number of directed entries; adjacency is not symmetric")
        if len(indices) and (indices.min() < 0 or indices.max() >= n):
            raise GraphValidationError("neighbor id out of range")
        rows = np.repeat(np.arange(n), np.diff(indptr))
        if np.any(rows == indices):
            raise GraphValidationError("self-loop stored in adjacency")
        # strictly increasing within each row
        step = np.diff(indices)
        same_row = rows[1:] == rows[:-1]
        if np.any(step[same_row] <= 0):
            raise GraphValidationError("row column indices must be strictly increasing")
        fwd = set(zip(rows.tolist(), indices.tolist()))
        if any((j, i) not in fwd for i, j in fwd):
            raise GraphValidationError("adjacency is not symmetric")
        if len(self.texts) != n or len(self.labels) != n or len(self.split) != n:
            raise GraphValidationError("texts/labels/split must have one entry per node")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise GraphValidationError("label out of range [0, num_classes)")
        bad = set(np.unique(self.split).tolist()) - set(SPLITS)
        if bad:
            raise GraphValidationError(f"unknown split tags {sorted(bad)}")


def from_edges(edges, texts, labels, split, num_classes=None) -> TextAttributedGraph:
    """Build a canonical graph: edges symmetrized, deduplicated, self-loops dropped."""
    n = len(texts)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise GraphValidationError("edge endpoint out of range")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    if len(both):
        both = np.unique(both, axis=0)  # lexicographic (row, col) sort + dedup
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    indptr = np.cumsum(indptr)
    graph = TextAttributedGraph(
        indptr=indptr,
        indices=both[:, 1].astype(np.int64).copy(),
        texts=tuple(texts),
        labels=labels,
        split=np.asarray(split, dtype="<U9"),
        num_classes=int(num_classes),
    )
    graph.validate()
    return graph


def degree(graph: TextAttributedGraph, node: int) -> int:
    return int(graph.indptr[node + 1] - graph.indptr[node])


def neighbors(graph: TextAttributedGraph, node: int) -> np.ndarray:
    return graph.indices[graph.indptr[node]:graph.indptr[node + 1]]


def _read_nodes(path):
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise GraphFormatError(path, lineno, "expected a JSON object")
            missing = {"id", "text", "label", "split"} - obj.keys()
            if missing:
                raise GraphFormatError(path, lineno, f"missing fields {sorted(missing)}")
            nid, label = obj["id"], obj["label"]
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise GraphFormatError(path, lineno, "id must be an integer")
            if not isinstance(label, int) or isinstance(label, bool):
                raise GraphFormatError(path, lineno, "label must be an integer")
            if not isinstance(obj["text"], str):
                raise GraphFormatError(path, lineno, "text must be a string")
            if obj["split"] not in SPLITS:
                raise GraphFormatError(path, lineno, f"split must be one of {SPLITS}")
            if nid in records:
                raise GraphFormatError(path, lineno, f"duplicate node id {nid}")
            records[nid] = (obj["text"], label, obj["split"], lineno)
    return records


def _read_edges(path, num_nodes):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise GraphFormatError(path, lineno, "expected 'src dst'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(path, lineno, "node ids must be integers") from None
            for x in (u, v):
                if not 0 <= x < num_nodes:
                    raise GraphValidationError(
                        f"{path}:{lineno}: node id {x} out of range [0, {num_nodes})"
                    )
            pairs.append((u, v))
    return pairs


def load_graph(nodes_path, edges_path, num_classes=None) -> TextAttributedGraph:
    """Read ``nodes.jsonl`` + ``edges.txt`` into a validated graph.

    Node ids must be dense ``0..n-1``. ``num_classes`` defaults to
    ``max(label) + 1``; passing it explicitly turns out-of-range labels into
    validation errors.
    """
    records = _read_nodes(nodes_path)
    n = len(records)
    if set(records) != set(range(n)):
        gaps = sorted(set(range(n)) - set(records))[:5]
        raise GraphValidationError(f"node ids must be dense 0..{n - 1}; missing e.g. {gaps}")
    for nid, (_, label, _, lineno) in records.items():
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise GraphValidationError(f"{nodes_path}:{lineno}: label {label} out of range")
    texts = [records[i][0] for i in range(n)]
    labels = [records[i][1] for i in range(n)]
    split = [records[i][2] for i in range(n)]
    edges = _read_edges(edges_path, n)
    return from_edges(edges, texts, labels, split, num_classes=num_classes)


def save_graph(graph: TextAttributedGraph, nodes_path, edges_path) -> None:
    """Write the canonical form (sorted ids, one line per undirected edge)."""
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(graph.num_nodes):
            rec = {
                "id": i,
                "text": graph.texts[i],
                "label": int(graph.labels[i]),
                "split": str(graph.split[i]),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for u, v in graph.edge_list().tolist():
            fh.write(f"{u} {v}\n")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize an all-zero feature row")
    return x / norms


def check_features(features, num_nodes=None, atol=1e-6) -> np.ndarray:
    """Validate a feature matrix: 2-D, finite, unit-norm rows, right row count."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    if num_nodes is not None and features.shape[0] != num_nodes:
        raise ValueError(f"features have {features.shape[0]} rows, graph has {num_nodes} nodes")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    norms = np.linalg.norm(features, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"feature row {worst} has norm {norms[worst]:.8f}, expected 1")
    return features


def write_features(path, features: np.ndarray) -> None:
    features = np.asarray(features)
    n, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURES_HEADER.pack(FEATURES_MAGIC, FEATURES_VERSION, n, dim))
        fh.write(features.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Load ``features.bin``; rows come back as float64 re-normalized to unit length."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURES_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, dim = _FEATURES_HEADER.unpack_from(raw)
    if magic != FEATURES_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FEATURES_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[_FEATURES_HEADER.size:]
    if len(body) != n * dim * 4:
        raise ValueError(f"{path}: expected {n * dim * 4} payload bytes, found {len(body)}")
    rows = np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
    # float32 storage loses ~1e-7 of norm; restore the unit-row invariant
    return normalize_rows(rows)
