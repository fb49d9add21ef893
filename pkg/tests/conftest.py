"""
Shared fixtures.

Models here are deliberately tiny. ``randomize`` redraws the weights with a
larger spread than the training initialization, whose zero velocity head
would make every integrator trivial.
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.ai.flow import TrainConfig, train
from src.ai.models import MicroDiT, ModelConfig
from src.ai.oracle import train_oracle
from src.bench.shapes import gen_dataset
from src.core.rng import Rng

# 8x8 images, 4 image tokens
TINY = ModelConfig(image_size=8, patch=4, d_model=16, heads=2, layers=2, time_embed_dim=16, mlp_ratio=2)
# 32x32 images like the shapes world, but narrow and shallow
SMALL = ModelConfig(d_model=16, heads=2, layers=2, time_embed_dim=16, mlp_ratio=2)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run tests that train models or run benchmarks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs --runslow (training, oracle gate, benchmarks)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def randomize(model: MicroDiT, seed: int, scale: float = 0.3) -> MicroDiT:
    """Redraw every weight except layer-norm gains from N(0, scale^2)."""
    rng = Rng(seed)
    for i, (name, p) in enumerate(sorted(model.params.items())):
        if not name.endswith(".g"):
            p.data = (rng.spawn(i).normal(p.shape) * np.float32(scale)).astype(np.float32)
    return model


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_model():
    return randomize(MicroDiT.init(TINY, Rng(0)), seed=1)


@pytest.fixture
def small_model():
    return randomize(MicroDiT.init(SMALL, Rng(0)), seed=2, scale=0.2)


@pytest.fixture(scope="session")
def trained_model():
    """A briefly trained SMALL model on generated scenes (slow tests only)."""
    images, prompts, _ = gen_dataset(512, Rng(5).spawn(0))
    model = MicroDiT.init(SMALL, Rng(5).spawn(1))
    train(model, images, prompts, TrainConfig(steps=400, batch_size=16, lr=3e-3, optimizer="adam",
                                              log_every=0), Rng(5).spawn(2), progress=False)
    return model


@pytest.fixture(scope="session")
def quick_oracle():
    """Undertrained oracle with the accuracy gate disabled."""
    return train_oracle(Rng(0), n_train=300, n_holdout=40, n_noise=2, gate=0.0)


@pytest.fixture(scope="session")
def gated_oracle():
    """The default oracle, trained to the accuracy gate (slow tests only)."""
    return train_oracle(Rng(0))
