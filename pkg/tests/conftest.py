import numpy as np
import pytest

from selfpro.graphs import generate_sbm
from selfpro.pretrain import PretrainConfig, pretrain


@pytest.fixture(scope="session")
def sbm_graph():
    """Small homophilous SBM with noisy but informative features."""
    return generate_sbm(40, 2, 0.4, 0.05, feature_noise=0.3, seed=11)


@pytest.fixture(scope="session")
def small_cfg():
    return PretrainConfig(epochs=80, lr=1e-2, tau=0.5, n_negatives=10,
                          hidden_dim=16, embed_dim=16, seed=3)


@pytest.fixture(scope="session")
def pretrained(sbm_graph, small_cfg):
    state, trace = pretrain(sbm_graph, small_cfg)
    return state


def random_graph(n, p, seed, n_classes=None, rng=None):
    """Erdos-Renyi helper for oracle tests."""
    from selfpro.graphs import Graph

    rng = rng or np.random.default_rng(seed)
    mask = np.triu(rng.random((n, n)) < p, k=1)
    i, j = np.nonzero(mask)
    labels = rng.integers(0, n_classes, size=n) if n_classes else None
    return Graph(n_nodes=n, edges=np.stack([i, j], axis=1),
                 features=rng.standard_normal((n, 3)), labels=labels,
                 n_classes=n_classes)
