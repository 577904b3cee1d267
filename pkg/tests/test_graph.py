import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from ellagnn.graph import (
    GraphFormatError,
    GraphValidationError,
    check_features,
    degree,
    from_edges,
    load_graph,
    neighbors,
    normalize_rows,
    read_features,
    save_graph,
    write_features,
)


def write_raw(tmp_path, nodes, edges_text):
    nodes_path = tmp_path / "nodes.jsonl"
    edges_path = tmp_path / "edges.txt"
    nodes_path.write_text("".join(json.dumps(n) + "\n" for n in nodes))
    edges_path.write_text(edges_text)
    return nodes_path, edges_path


def three_nodes():
    return [{"id": i, "text": f"t{i}", "label": i % 2, "split": "train"} for i in range(3)]


def rows(graph):
    return [neighbors(graph, v).tolist() for v in range(graph.num_nodes)]


def test_single_edge_is_symmetrized(tmp_path):
    g = load_graph(*write_raw(tmp_path, three_nodes(), "0 1\n"))
    assert rows(g) == [[1], [0], []]


def test_duplicates_and_self_loops_dropped(tmp_path):
    g = load_graph(*write_raw(tmp_path, three_nodes(), "0 1\n1 0\n2 2\n"))
    assert rows(g) == [[1], [0], []]
    assert g.indptr.tolist() == [0, 1, 2, 2]


def test_comments_and_blank_lines(tmp_path):
    g = load_graph(*write_raw(tmp_path, three_nodes(), "# header\n\n0 2  # trailing\n"))
    assert rows(g) == [[2], [], [0]]


def test_malformed_node_line_reports_line(tmp_path):
    nodes_path, edges_path = write_raw(tmp_path, three_nodes(), "")
    nodes_path.write_text(nodes_path.read_text() + "{not json\n")
    with pytest.raises(GraphFormatError) as err:
        load_graph(nodes_path, edges_path)
    assert err.value.lineno == 4


def test_malformed_edge_line_reports_line(tmp_path):
    with pytest.raises(GraphFormatError) as err:
        load_graph(*write_raw(tmp_path, three_nodes(), "0 1\n0 x\n"))
    assert err.value.lineno == 2


def test_edge_id_out_of_range(tmp_path):
    with pytest.raises(GraphValidationError, match="out of range"):
        load_graph(*write_raw(tmp_path, three_nodes(), "0 7\n"))


def test_label_out_of_range(tmp_path):
    with pytest.raises(GraphValidationError):
        load_graph(*write_raw(tmp_path, three_nodes(), ""), num_classes=1)


def test_gapped_ids_rejected(tmp_path):
    nodes = three_nodes()
    nodes[2]["id"] = 5
    with pytest.raises(GraphValidationError, match="dense"):
        load_graph(*write_raw(tmp_path, nodes, ""))


def test_bad_split_rejected(tmp_path):
    nodes = three_nodes()
    nodes[0]["split"] = "holdout"
    with pytest.raises(GraphFormatError):
        load_graph(*write_raw(tmp_path, nodes, ""))


def test_empty_text_is_legal(tmp_path):
    nodes = three_nodes()
    nodes[1]["text"] = ""
    g = load_graph(*write_raw(tmp_path, nodes, ""))
    assert g.texts[1] == ""


def test_degree_examples(path3):
    iso = from_edges([], ["x"], [0], ["train"])
    assert degree(iso, 0) == 0
    assert neighbors(iso, 0).tolist() == []
    tri = from_edges([(0, 1), (1, 2), (2, 0)], ["a"] * 3, [0] * 3, ["train"] * 3)
    assert degree(tri, 0) == 2
    assert neighbors(path3, 1).tolist() == [0, 2]


def test_degree_and_neighbors_match_edge_scan():
    g, edges = random_graph(100, 0.05, seed=3)
    adj = {v: set() for v in range(100)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    for v in range(100):
        assert degree(g, v) == len(adj[v])
        assert neighbors(g, v).tolist() == sorted(adj[v])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), max_size=60))
def test_csr_invariants(edges):
    g = from_edges(edges, [""] * 15, [0] * 15, ["train"] * 15)
    g.validate()
    assert g.degrees().sum() == 2 * g.num_edges
    for v in range(15):
        row = neighbors(g, v)
        assert np.all(np.diff(row) > 0)
        assert v not in row
        for u in row:
            assert v in neighbors(g, u)


def test_reload_is_idempotent(tmp_path):
    g, _ = random_graph(40, 0.1, seed=1)
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    save_graph(g, a / "nodes.jsonl", a / "edges.txt")
    g1 = load_graph(a / "nodes.jsonl", a / "edges.txt")
    save_graph(g1, b / "nodes.jsonl", b / "edges.txt")
    g2 = load_graph(b / "nodes.jsonl", b / "edges.txt")
    assert g1.indptr.tobytes() == g2.indptr.tobytes() == g.indptr.tobytes()
    assert g1.indices.tobytes() == g2.indices.tobytes()
    assert (a / "edges.txt").read_bytes() == (b / "edges.txt").read_bytes()
    assert (a / "nodes.jsonl").read_bytes() == (b / "nodes.jsonl").read_bytes()


def test_features_roundtrip(tmp_path):
    x = normalize_rows(np.random.default_rng(0).normal(size=(7, 5)))
    write_features(tmp_path / "f.bin", x)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:4] == b"ELGF"
    assert len(raw) == 4 + 4 + 8 + 4 + 7 * 5 * 4
    y = read_features(tmp_path / "f.bin")
    np.testing.assert_allclose(y, x, atol=1e-6)
    check_features(y, 7)


def test_check_features_rejects():
    with pytest.raises(ValueError, match="norm"):
        check_features(np.ones((2, 2)))
    with pytest.raises(ValueError, match="rows"):
        check_features(np.eye(3), num_nodes=2)
    with pytest.raises(ValueError, match="2-D"):
        check_features(np.ones(3))
