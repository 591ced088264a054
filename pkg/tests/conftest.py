"""Shared fixtures: a tiny synthetic setup that trains in well under a second."""

import json

import numpy as np
import pytest

from psdlab.config import RunConfig
from psdlab.data import gen_synthetic


def small_config_dict(**overrides) -> dict:
    data = {
        "schema_version": 1,
        "seed": 3,
        "dataset": {
            "num_classes": 3,
            "train_per_class": 40,
            "test_per_class": 20,
            "reference_per_class": 10,
            "height": 8,
            "width": 8,
            "channels": 3,
            "noise": 0.05,
        },
        "attack": {"preset": "badnets", "poisoning_ratio": 0.1},
        "model": {"hidden": 16},
        "train": {
            "sgd": {"optimizer": "sgd", "epochs": 3, "batch_size": 32, "learning_rate": 0.1, "rho": 0.0},
            "sam": {"optimizer": "sam", "epochs": 3, "batch_size": 32, "learning_rate": 0.1, "rho": 0.05},
        },
        "scaler": {"max_dim": 8},
        "grid": {"attacks": ["badnets", "blend_strong", "blend_weak"], "ratios": [0.05, 0.1, 0.2], "seeds": [0]},
    }
    data.update(overrides)
    return data


@pytest.fixture
def small_config() -> RunConfig:
    return RunConfig.model_validate(small_config_dict())


@pytest.fixture
def config_file(tmp_path):
    def write(**overrides):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(small_config_dict(**overrides)))
        return path
    return write


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset():
    return gen_synthetic(3, 10, shape=(8, 8, 3), noise=0.05, seed=7)
