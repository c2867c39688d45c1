"""Shared fixtures: small synthetic datasets that train in well under a second."""

import numpy as np
import pytest

from quadmatch.synthetic import make_category, make_dataset


@pytest.fixture(scope="session")
def tiny_category():
    return make_category("tiny", n_landmarks=6, d_desc=5, seed=7)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_category):
    """Eight clean pairs from one category; enough for smoke training."""
    return make_dataset([tiny_category], pairs_per_category=8, seed=3, jitter=0.1)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
