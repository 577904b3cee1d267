import json
import logging

import numpy as np
import pytest

from conftest import unit_rows
from ellagnn.metrics import accuracy, gradient_flow, intra_class_cosine


def random_gradient_set(rng):
    layers = []
    for _ in range(int(rng.integers(1, 9))):
        a, b = rng.integers(1, 12, size=2)
        scale = 10.0 ** rng.uniform(-6, 3)
        layers.append((rng.normal(scale=scale, size=(a, b)), rng.normal(scale=scale, size=b)))
    return layers


def flat_norm_oracle(layers):
    norms = []
    for dW, db in layers:
        total = 0.0
        for v in list(dW.ravel()) + list(db.ravel()):
            total += float(v) * float(v)
        norms.append(total ** 0.5)
    return sum(norms) / len(norms), norms


def test_gf_examples():
    assert gradient_flow([np.zeros((3, 3)), np.zeros(4)]).gf == 0.0
    two = gradient_flow([np.array([3.0]), np.array([0.0, 4.0])])
    assert two.per_layer_norms == (3.0, 4.0) and two.gf == 3.5


def test_gf_matches_elementwise_oracle_1000_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        layers = random_gradient_set(rng)
        want, norms = flat_norm_oracle(layers)
        got = gradient_flow(layers)
        assert abs(got.gf - want) <= 1e-9 * max(1.0, want)
        np.testing.assert_allclose(got.per_layer_norms, norms, rtol=1e-12)
        assert min(got.per_layer_norms) >= 0


@pytest.mark.parametrize("c", [0.0, 2.0, 10.0])
def test_gf_homogeneity(c):
    rng = np.random.default_rng(1)
    for _ in range(200):
        layers = random_gradient_set(rng)
        base = gradient_flow(layers).gf
        scaled = gradient_flow([(c * dW, c * db) for dW, db in layers]).gf
        if c in (0.0, 2.0):
            assert scaled == c * base  # exact: zero and powers of two scale without rounding
        else:
            assert scaled == pytest.approx(c * base, rel=1e-14)


def test_gf_report_serializes():
    doc = json.loads(json.dumps(gradient_flow([np.ones(4)]).to_dict()))
    assert doc == {"per_layer_norms": [2.0], "gf": 2.0}


def test_cosine_examples():
    same = np.tile([[0.6, 0.8]], (4, 1))
    assert intra_class_cosine(same, [0, 0, 0, 0]).per_class[0] == pytest.approx(1.0)
    ortho = np.eye(2)
    assert intra_class_cosine(ortho, [1, 1]).per_class[1] == pytest.approx(0.0, abs=1e-15)


def pairwise_oracle(x, labels):
    out = {}
    for c in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == c]
        pairs = [(i, j) for a, i in enumerate(idx) for j in idx[a + 1:]]
        if pairs:
            out[c] = sum(float(np.dot(x[i], x[j])) for i, j in pairs) / len(pairs)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_cosine_matches_pairwise_loop(seed):
    rng = np.random.default_rng(seed)
    m = 30 if seed == 0 else int(rng.integers(2, 201))
    x = unit_rows(m, 16, seed)
    labels = rng.integers(3, size=m).tolist() if seed else [0] * m
    got = intra_class_cosine(x, labels).per_class
    want = pairwise_oracle(x, labels)
    assert set(got) == set(want)
    for c in want:
        assert abs(got[c] - want[c]) < 1e-9
        assert -1 <= got[c] <= 1


def test_cosine_invariances():
    x = unit_rows(60, 8, 3)
    labels = np.random.default_rng(3).integers(3, size=60)
    base = intra_class_cosine(x, labels).per_class
    perm = np.random.default_rng(4).permutation(60)
    shuffled = intra_class_cosine(x[perm], labels[perm]).per_class
    relabel = {0: 7, 1: 5, 2: 9}
    renamed = intra_class_cosine(x, [relabel[l] for l in labels.tolist()]).per_class
    for c in base:
        assert shuffled[c] == pytest.approx(base[c], abs=1e-12)
        assert renamed[relabel[c]] == pytest.approx(base[c], abs=1e-12)


def test_singleton_class_omitted(caplog):
    with caplog.at_level(logging.INFO, logger="ellagnn.metrics"):
        rep = intra_class_cosine(unit_rows(3, 4, 0), [0, 0, 1], variant="augmented")
    assert set(rep.per_class) == {0}
    assert "omitted" in caplog.text
    assert rep.to_dict()["variant"] == "augmented"


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0, 0], [1, 2, 3]) == 0.0
    rng = np.random.default_rng(0)
    pred, true = rng.integers(4, size=1000), rng.integers(4, size=1000)
    mask = rng.random(1000) < 0.5
    hits = sum(1 for p, t, m in zip(pred, true, mask) if m and p == t)
    assert accuracy(pred, true, mask) == hits / mask.sum()
    with pytest.raises(ValueError):
        accuracy([1], [1], mask=[False])
    with pytest.raises(ValueError):
        accuracy([1, 2], [1])
