from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from tgt_recsys.config import AblationConfig, ModelConfig, RunConfig
from tgt_recsys.core.rng import component_rng
from tgt_recsys.dataset import Dataset
from tgt_recsys.model import ModelSizes, TemporalGraphTransformer
from tgt_recsys.selfcheck import toy_dataset


@pytest.fixture
def toy() -> Dataset:
    return toy_dataset(seed=0)


@pytest.fixture
def small_model_config() -> ModelConfig:
    return ModelConfig(dim=8, layers=2, attention_heads=2, channels=2)


@pytest.fixture
def toy_sizes(toy: Dataset) -> ModelSizes:
    return ModelSizes(toy.num_users, toy.num_items, len(toy.vocabulary), 3)


@pytest.fixture
def toy_model(toy_sizes: ModelSizes, small_model_config: ModelConfig) -> TemporalGraphTransformer:
    return TemporalGraphTransformer.create(
        toy_sizes, small_model_config, AblationConfig(), component_rng(0, "init")
    )


@pytest.fixture
def run_config(tmp_path: Path) -> RunConfig:
    return RunConfig().updated(
        {
            "data.window": 3,
            "data.target_behavior": "buy",
            "model.dim": 8,
            "model.attention_heads": 2,
            "train.epochs": 2,
            "train.batch_size": 2,
            "eval.negatives": 3,
            "run.output_dir": str(tmp_path / "runs"),
        }
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
