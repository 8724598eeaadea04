import numpy as np
import pytest

from gane import graph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return graph.from_edges([("a", "b", 1.0), ("b", "c", 2.0), ("a", "c", 1.0)])


@pytest.fixture
def tri_file(tmp_path):
    p = tmp_path / "tri.tsv"
    p.write_text("a\tb\t1\nb\tc\t2\na\tc\t1\n", encoding="utf-8")
    return p


def random_network(rng, n=12, p=0.4, weighted=True):
    """Connected-ish random graph: a path backbone plus random chords."""
    edges = {(k, k + 1) for k in range(n - 1)}
    for a in range(n):
        for b in range(a + 2, n):
            if rng.random() < p:
                edges.add((a, b))
    edges = sorted(edges)
    w = rng.uniform(0.5, 3.0, len(edges)) if weighted else np.ones(len(edges))
    return graph.Network(tuple(str(v) for v in range(n)),
                         np.array([e[0] for e in edges]), np.array([e[1] for e in edges]), w)
