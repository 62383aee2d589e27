# tests/conftest.py

from __future__ import annotations

import os

import numpy as np
import pytest

from neural_statistician.models.schemas import ModelConfig
from neural_statistician.models.statistician import ElboNoise, NeuralStatistician


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NSTAT_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; set NSTAT_RUN_SLOW=1 to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        n_features=2,
        c_dim=2,
        z_dim=2,
        n_stochastic_layers=2,
        hidden_width=8,
        hidden_depth=2,
        activation="elu",
        max_set_size=3,
    )


@pytest.fixture
def tiny_model(tiny_config: ModelConfig) -> NeuralStatistician:
    return NeuralStatistician(tiny_config, seed=0)


@pytest.fixture
def tiny_batch() -> np.ndarray:
    return np.random.default_rng(1).normal(size=(2, 3, 2))


@pytest.fixture
def tiny_noise(tiny_config: ModelConfig) -> ElboNoise:
    return ElboNoise.draw(np.random.default_rng(2), 2, 3, tiny_config)


@pytest.fixture
def small_1d_config() -> ModelConfig:
    return ModelConfig(n_features=1, c_dim=3, z_dim=4, hidden_width=16, hidden_depth=2, max_set_size=20)
