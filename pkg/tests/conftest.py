from __future__ import annotations

import numpy as np
import pytest

import helpers


@pytest.fixture
def kite():
    return helpers.kite_rgba()


@pytest.fixture
def rosette_source():
    return helpers.build_source(n_leaves=6, seed=7)


@pytest.fixture
def background():
    return helpers.random_background((200, 150), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
