import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet():
    """Silence solver non-convergence warnings inside a test."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def random_binary(rng, n, m, shift=1.0):
    """Two overlapping Gaussian blobs with both classes present."""
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    rng.shuffle(y)
    X = rng.normal(size=(n, m)) + shift * y[:, None] * rng.normal(size=m)
    return X, y


def random_affine_chain(rng, n_nodes=None, max_dim=20):
    """Random affine chain of 3-5 nodes (the last one a linear decision)."""
    from brmm.chains import AffineNode, ProcessingChain, linear_decision_node

    n_nodes = int(rng.integers(3, 6)) if n_nodes is None else n_nodes
    dims = [int(d) for d in rng.integers(1, max_dim + 1, size=n_nodes)]
    nodes = []
    for a, b in zip(dims[:-1], dims[1:]):
        nodes.append(AffineNode(rng.normal(size=(b, a)) / np.sqrt(a), rng.normal(size=b)))
    nodes.append(linear_decision_node(rng.normal(size=dims[-1]) / np.sqrt(dims[-1]),
                                      float(rng.normal())))
    return ProcessingChain(tuple(nodes))


def random_anchor(rng, d):
    """Point whose components have magnitudes in [0.5, 2] and random signs."""
    return rng.uniform(0.5, 2.0, size=d) * rng.choice([-1.0, 1.0], size=d)
