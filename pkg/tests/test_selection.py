import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph, unit_rows
from ellagnn import selection as sel
from ellagnn.graph import from_edges


def graph_from(edges, n):
    return from_edges(edges, [""] * n, [0] * n, ["train"] * n)


def dense_pagerank(graph, damping=0.85, tol=1e-12, max_iter=10_000):
    n = graph.num_nodes
    A = np.zeros((n, n))
    for u, v in graph.edge_list().tolist():
        A[u, v] = A[v, u] = 1.0
    P = np.zeros((n, n))
    for j in range(n):
        col = A[:, j]
        P[:, j] = col / col.sum() if col.sum() else 1.0 / n
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * P @ r + (1 - damping) / n
        if np.abs(nxt - r).sum() < tol:
            return nxt
        r = nxt
    return r


def test_pagerank_two_nodes():
    s = sel.pagerank_scores(graph_from([(0, 1)], 2))
    np.testing.assert_allclose(s.scores, [0.5, 0.5], atol=1e-12)


def test_pagerank_star():
    s = sel.pagerank_scores(graph_from([(0, 1), (0, 2), (0, 3)], 4)).scores
    assert s[0] > s[1]
    assert s[1] == pytest.approx(s[2], abs=1e-15) and s[2] == pytest.approx(s[3], abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_pagerank_matches_dense_oracle(seed):
    g, _ = random_graph(200, 0.015, seed)
    s = sel.pagerank_scores(g)
    assert s.converged
    assert abs(s.scores.sum() - 1) < 1e-9 and s.scores.min() >= 0
    assert np.abs(s.scores - dense_pagerank(g)).max() < 1e-8
    top = sel.select_by_pagerank(s, 20)
    oracle = sorted(range(200), key=lambda i: (s.scores[i], i))[:20]
    assert list(top.node_ids) == oracle


def test_pagerank_with_isolated_nodes_sums_to_one():
    g = graph_from([(0, 1), (1, 2)], 6)
    assert abs(sel.pagerank_scores(g).scores.sum() - 1) < 1e-9


def test_pagerank_nonconvergence_flag():
    g, _ = random_graph(30, 0.2, 0)
    s = sel.pagerank_scores(g, max_iter=1)
    assert not s.converged and s.iterations == 1


def test_select_by_pagerank_examples():
    s = sel.SelectionScores("pagerank", np.array([0.1, 0.4, 0.5]))
    assert sel.select_by_pagerank(s, 1).node_ids == (0,)
    assert sel.select_by_pagerank(s, 1, "descending").node_ids == (2,)
    tied = sel.SelectionScores("pagerank", np.array([0.5, 0.5]))
    assert sel.select_by_pagerank(tied, 1).node_ids == (0,)
    assert sel.select_by_pagerank(s, 0).node_ids == ()
    assert sel.select_by_pagerank(s, 10).node_ids == (0, 1, 2)


# -- k-means -------------------------------------------------------------------

def lloyd_oracle(x, k, seed, max_iter=300):
    """Plain-loop k-means with the same seeded k-means++ draw protocol."""
    n = len(x)
    rng = np.random.default_rng(seed)

    def sq(a, b):
        return float(sum((ai - bi) ** 2 for ai, bi in zip(a, b)))

    chosen = [int(rng.integers(n))]
    closest = np.array([sq(x[i], x[chosen[0]]) for i in range(n)])
    while len(chosen) < k:
        nxt = int(rng.choice(n, p=closest / closest.sum()))
        chosen.append(nxt)
        closest = np.minimum(closest, [sq(x[i], x[nxt]) for i in range(n)])
    cent = [x[c].copy() for c in chosen]
    labels = [min(range(k), key=lambda c: (sq(x[i], cent[c]), c)) for i in range(n)]
    for _ in range(max_iter):
        for c in range(k):
            members = [x[i] for i in range(n) if labels[i] == c]
            if members:
                cent[c] = np.mean(members, axis=0)
        new = [min(range(k), key=lambda c: (sq(x[i], cent[c]), c)) for i in range(n)]
        if new == labels:
            break
        labels = new
    d = np.array([math.sqrt(sq(x[i], cent[labels[i]])) for i in range(n)])
    return np.array(labels), 1 / (1 + d / d.max())


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_matches_lloyd_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    centers = rng.normal(scale=4, size=(3, 4))
    x = np.vstack([c + rng.normal(size=(17, 4)) for c in centers])[:50]
    _, labels, history = sel.kmeans(x, 3, seed=seed)
    o_labels, o_density = lloyd_oracle(x, 3, seed)
    assert labels.tolist() == o_labels.tolist()
    dens = sel.cluster_density_scores(x, 3, seed=seed)
    np.testing.assert_allclose(dens.scores, o_density, atol=1e-12)
    top = sel.select_by_density(dens, 5)
    assert list(top.node_ids) == sorted(range(50), key=lambda i: (o_density[i], i))[:5]


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_objective_non_increasing(seed):
    x = unit_rows(120, 8, seed)
    _, _, history = sel.kmeans(x, 6, seed=seed)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_density_range_and_endpoints():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]])
    dens = sel.cluster_density_scores(x, 1).scores
    # centroid sits on node 2; nodes 0 and 1 are at the max distance
    np.testing.assert_allclose(dens, [0.5, 0.5, 1.0])
    assert np.all((dens > 0) & (dens <= 1))


def test_kmeans_reseeds_empty_cluster():
    x = np.array([[0.0], [0.0], [0.0], [10.0]])
    _, labels, _ = sel.kmeans(x, 3, seed=0)
    assert len(labels) == 4


def test_select_by_density_examples():
    s = sel.SelectionScores("cluster_density", np.array([0.9, 0.2, 0.5]))
    assert sel.select_by_density(s, 2).node_ids == (1, 2)
    flat = sel.SelectionScores("cluster_density", np.full(4, 0.7))
    assert sel.select_by_density(flat, 2).node_ids == (0, 1)


# -- text length -----------------------------------------------------------------

def test_text_length_examples():
    assert sel.content_word_count("", {"the"}) == 0
    assert sel.content_word_count("The the THE graph", {"the"}) == 1
    assert sel.content_word_count("(The) graph, networks!", {"the"}) == 2


def test_default_stopwords():
    words = sel.default_stopwords()
    assert len(words) == 127
    assert {"the", "a", "of", "and"} <= words


PUNCT = ".,;:!?()'\""


def oracle_count(text, stopwords):
    n = 0
    for tok in text.split():
        tok = tok.lower().strip(PUNCT)
        if tok and tok not in stopwords:
            n += 1
    return n


def test_text_length_matches_reference_tokenizer():
    rng = np.random.default_rng(0)
    vocab = ["The", "graph", "of", "Neural", "networks", "AND", "a", "model", "in", "learning", ""]
    stop = sel.default_stopwords()
    texts = []
    for _ in range(100):
        words = []
        for _ in range(rng.integers(0, 15)):
            w = str(rng.choice(vocab))
            w = str(rng.choice(list(PUNCT))) * int(rng.integers(0, 2)) + w + str(rng.choice(list(PUNCT))) * int(rng.integers(0, 3))
            words.append(w)
        texts.append(str(rng.choice([" ", "\t", "\n", "  "])).join(words))
    g = from_edges([], texts, [0] * 100, ["train"] * 100)
    scores = sel.text_length_scores(g).scores
    assert scores.tolist() == [oracle_count(t, stop) for t in texts]


def test_custom_stopwords_file(tmp_path):
    path = tmp_path / "stop.txt"
    path.write_text("Graph\nnode\n")
    assert sel.load_stopwords(path) == {"graph", "node"}


# -- degree ----------------------------------------------------------------------

def test_degree_percentile_examples():
    # degrees 1, 2, 3, 4 after symmetrization
    edges = [(0, 4), (1, 4), (1, 5), (2, 4), (2, 5), (2, 6), (3, 4), (3, 5), (3, 6), (3, 7)]
    g = graph_from(edges, 8)
    deg = g.degrees()
    cs = sel.select_by_degree(g, 25)
    assert len(cs) == 2 and deg[list(cs.node_ids)].max() == 1
    full = sel.select_by_degree(g, 100)
    assert list(full.node_ids) == sorted(range(8), key=lambda i: (deg[i], i))


def test_degree_percentile_matches_oracle():
    g, edges = random_graph(200, 0.03, 9)
    counts = [0] * 200
    for u, v in edges:
        counts[u] += 1
        counts[v] += 1
    oracle = sorted(range(200), key=lambda i: (counts[i], i))[:20]
    assert list(sel.select_by_degree(g, 10).node_ids) == oracle


@pytest.mark.parametrize("p", [0, -1, 100.5])
def test_degree_percentile_out_of_range(p):
    with pytest.raises(ValueError):
        sel.select_by_degree(graph_from([], 3), p)


# -- combined --------------------------------------------------------------------

def test_combined_endpoints():
    rng = np.random.default_rng(1)
    pr = sel.SelectionScores("pagerank", rng.random(30))
    dn = sel.SelectionScores("cluster_density", rng.random(30))
    one = sel.select_by_combined(sel.combine_scores(pr, dn, 1.0), 30).node_ids
    zero = sel.select_by_combined(sel.combine_scores(pr, dn, 0.0), 30).node_ids
    assert one == sel.select_by_pagerank(pr, 30).node_ids
    assert zero == sel.select_by_density(dn, 30).node_ids


def test_combined_matches_hand_interpolation():
    rng = np.random.default_rng(2)
    pr = rng.random(20)
    dn = rng.random(20)
    got = sel.combine_scores(sel.SelectionScores("pagerank", pr), sel.SelectionScores("cluster_density", dn), 0.5)
    lo_p, hi_p, lo_d, hi_d = min(pr), max(pr), min(dn), max(dn)
    want = [0.5 * (a - lo_p) / (hi_p - lo_p) + 0.5 * (b - lo_d) / (hi_d - lo_d) for a, b in zip(pr, dn)]
    np.testing.assert_allclose(got.scores, want, atol=1e-15)
    assert got.method == "combined"


def test_constant_scores_normalize_to_zero():
    assert sel.minmax(np.full(4, 3.0)).tolist() == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        sel.combine_scores(sel.SelectionScores("pagerank", np.zeros(2)),
                           sel.SelectionScores("cluster_density", np.zeros(2)), 1.5)


# -- properties ------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40), st.integers(0, 40), st.integers(0, 40))
def test_budget_prefix_property(values, k1, k2):
    s = sel.SelectionScores("text_length", np.array(values))
    small, large = sorted((k1, k2))
    a = sel.select_by_text_length(s, small).node_ids
    b = sel.select_by_text_length(s, large).node_ids
    assert b[:len(a)] == a
    assert len(b) == min(large, len(values))
    assert len(set(b)) == len(b)


def test_selection_deterministic():
    x = unit_rows(80, 6, 0)
    a = sel.cluster_density_scores(x, 4, seed=3).scores
    b = sel.cluster_density_scores(x, 4, seed=3).scores
    assert a.tobytes() == b.tobytes()


def test_candidate_set_json_roundtrip(tmp_path):
    cs = sel.CandidateSet((3, 1, 2), "pagerank", 3)
    cs.save(tmp_path / "c.json")
    assert sel.CandidateSet.load(tmp_path / "c.json") == cs
    assert cs.to_dict() == {"method": "pagerank", "budget_k": 3, "node_ids": [3, 1, 2]}
    with pytest.raises(ValueError):
        sel.CandidateSet((1, 1), "pagerank", 2)
