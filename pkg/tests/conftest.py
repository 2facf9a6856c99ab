import dataclasses

import numpy as np
import pytest

from ezavood.data import SynthConfig, generate_synthetic, split_views
from ezavood.pipeline import PipelineConfig, train_pipeline
from ezavood.seen import TrainConfig
from ezavood.unseen import AlignerConfig


def small_synth(**overrides):
    base = dict(
        n_seen_classes=3,
        n_unseen_classes=2,
        dim_feature=12,
        dim_text=6,
        samples_per_class_train=30,
        samples_per_class_test=10,
        seed=5,
    )
    base.update(overrides)
    return SynthConfig(**base)


def small_pipeline_config(**overrides):
    base = dict(
        synth=small_synth(),
        seen_train=TrainConfig(hidden_dims=(16, 16), epochs=10),
        aligner=AlignerConfig(embed_dim=16, proj_dim=8, epochs=10),
        principal_dim=4,
        seed=3,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(small_synth())


@pytest.fixture(scope="session")
def small_views(small_data):
    return split_views(small_data[0])


@pytest.fixture(scope="session")
def small_trained():
    return train_pipeline(small_pipeline_config())


@pytest.fixture(scope="session")
def default_trained():
    """The full default profile, trained once per session."""
    return train_pipeline(PipelineConfig())
