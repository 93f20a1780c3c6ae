import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.connectivity import SyntheticConfig, generate_synthetic  # noqa: E402
from src.core.network import NetworkSpec, init_network  # noqa: E402


@pytest.fixture(scope="session")
def small_data():
    """40 subjects, 8 nodes (input_dim 28), strong class effect."""
    cfg = SyntheticConfig(n_subjects=40, n_nodes=8, n_timepoints=80, class_effect_size=0.8, noise_sd=0.2)
    return generate_synthetic(cfg, seed=3)


@pytest.fixture(scope="session")
def reference_data():
    """The 25-node / 500-subject reference fixture used by the slow checks."""
    return generate_synthetic(SyntheticConfig(), seed=7)


@pytest.fixture
def tiny_net():
    return init_network(NetworkSpec(6, (5, 4), 2, (0.0, 0.2)), seed=1)


def random_batch(rng: np.random.Generator, n: int, dim: int):
    X = rng.normal(size=(n, dim))
    y = np.arange(n) % 2
    return X, y
