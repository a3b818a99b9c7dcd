"""Shared fixtures: a small synthetic corpus, its index, and tiny trained models.

Session-scoped so the expensive pieces (dataset generation, short training
runs) happen once per pytest invocation.
"""

from __future__ import annotations

import numpy as np
import pytest

from rallynet.agents import BCPolicy
from rallynet.data import split_dataset
from rallynet.experience import build_index
from rallynet.model.config import desk_scale_config
from rallynet.model.policy import RallyNetPolicy
from rallynet.synth import SyntheticConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """300 rallies from the two-mode scripted expert."""
    return generate_synthetic_dataset(SyntheticConfig(n_rallies=300), seed=7)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_dataset(small_dataset, 0.8)


@pytest.fixture(scope="session")
def small_index(small_split):
    train, _ = small_split
    return build_index(train)


@pytest.fixture(scope="session")
def tiny_config():
    """A config small and short enough for unit tests."""
    return desk_scale_config(seed=3, epochs=2, state_embed_dim=16, context_dim=8, encoder_hidden=16)


@pytest.fixture(scope="session")
def tiny_policy(small_split, small_index, tiny_config):
    """A briefly trained latent-SDE policy (not converged; structural tests only)."""
    train, _ = small_split
    policy = RallyNetPolicy(tiny_config, sorted({train.rallies[0].starter, train.rallies[0].second}))
    policy.fit(train, small_index)
    return policy


@pytest.fixture(scope="session")
def tiny_bc(small_split, tiny_config):
    train, _ = small_split
    policy = BCPolicy(tiny_config, sorted({train.rallies[0].starter, train.rallies[0].second}))
    policy.fit(train)
    return policy


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
