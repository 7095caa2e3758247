import numpy as np
import pytest

from glinkx.graph import LabelVector, SplitMasks, build_graph


def random_graph(rng, n, density=3.0, symmetrize=False):
    m = int(density * n)
    pairs = rng.integers(0, n, size=(m, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return build_graph(pairs, n, symmetrize=symmetrize)


def random_labeled(rng, n, c=3, density=3.0, symmetrize=False):
    g = random_graph(rng, n, density=density, symmetrize=symmetrize)
    labels = LabelVector(y=rng.integers(0, c, size=n), c=c)
    roles = rng.choice([0, 1, 2], size=n, p=[0.5, 0.25, 0.25]).astype(np.uint8)
    roles[rng.integers(0, n)] = 0  # guarantee a train node
    return g, labels, SplitMasks(roles)


def dense_adjacency(g):
    a = np.zeros((g.n, g.n))
    for s, d in g.edges():
        a[s, d] += 1.0
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
