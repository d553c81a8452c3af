"""Test fixtures for CT-Scroll."""

from __future__ import annotations

import numpy as np
import pytest

from ctscroll.harness.dataset import make_dataset
from ctscroll.harness.diagnostics import micro_config
from ctscroll.model.config import CTScrollConfig
from tests.fixtures.phantoms import desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def micro_cfg() -> CTScrollConfig:
    """2 triplets of 16² slices, d = 16."""
    return micro_config()


@pytest.fixture
def desk_cfg() -> CTScrollConfig:
    """Narrow model matching the phantom grid."""
    return desk_config()


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory):
    """Eight phantoms per split on the 24×64×64 grid, seed 0."""
    root = tmp_path_factory.mktemp("phantoms")
    make_dataset(root, n_per_split=8, seed=0)
    return root
