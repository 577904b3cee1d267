import numpy as np
import pytest

from ellagnn.datasets import make_synthetic_tag
from ellagnn.enhance import HashingEmbedder, embed_texts
from ellagnn.graph import from_edges


def random_graph(n, p, seed, num_classes=2):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
    labels = rng.integers(num_classes, size=n)
    split = np.array(["train", "val", "test"])[np.arange(n) % 3]
    texts = [f"node {i}" for i in range(n)]
    return from_edges(edges, texts, labels, split, num_classes=num_classes), edges


def unit_rows(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def synthetic():
    graph = make_synthetic_tag(num_nodes=200, num_classes=2, seed=0)
    features = embed_texts(HashingEmbedder(256), graph.texts)
    return graph, features


@pytest.fixture
def path3():
    return from_edges([(0, 1), (1, 2)], ["a", "b", "c"], [0, 1, 0], ["train", "val", "test"])


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def record_note(number, title, detail):
    line = f"[N/A ] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
