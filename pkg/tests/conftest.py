"""Shared fixtures: seeded generators, tiny models, tiny run configs"""
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.core.averaging import BnPolicy
from src.core.network import MlpSpec, Network
from src.harness.data import DatasetSpec, NoiseSpec
from src.harness.settings import EmaSpec, RunConfig, ScheduleSpec, SwaSpec

CONFIGS_DIR = Path(__file__).parent.parent / "data" / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def bn_spec():
    return MlpSpec((4, 6, 5, 3), (True, True), 3)


@pytest.fixture
def plain_spec():
    return MlpSpec((4, 6, 3), (False,), 3)


@pytest.fixture
def bn_network(bn_spec, rng):
    return Network.initialize(bn_spec, rng)


def make_run_config(**changes) -> RunConfig:
    """A run that trains in well under a second"""
    config = RunConfig(
        name="tiny",
        dataset=DatasetSpec("gaussian_blobs", 300, 4, 3, 3.0, seed=0),
        n_test=60,
        model=MlpSpec((4, 12, 3), (True,), 3),
        schedule=ScheduleSpec(base_lr=0.05, total_epochs=4, warmup_epochs=1),
        ema=EmaSpec(decays=(0.9, 0.968), period=2),
        swa=SwaSpec(enabled=True),
        bn_policies=(BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_ONCE_FINAL),
        batch_size=32,
        seeds=(0, 1),
    )
    return replace(config, **changes)


@pytest.fixture
def tiny_config():
    return make_run_config()


@pytest.fixture
def noisy_config():
    return make_run_config(noise=NoiseSpec(0.4, seed=3))


@pytest.fixture
def smoke_config_path():
    return str(CONFIGS_DIR / "smoke.toml")
