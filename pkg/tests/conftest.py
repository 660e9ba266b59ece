"""Shared fixtures. All tests are network-free and filesystem-isolated."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.trainer import TrainConfig  # noqa: E402
from core.tsp import generate_instance, instance_from_coords  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long training reproductions")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training reproduction, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture()
def square():
    """Unit square corners in perimeter order; optimal tour cost is 4."""
    return instance_from_coords([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@pytest.fixture()
def small_instance():
    return generate_instance(6, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def tiny_config():
    """Small enough that a full training run takes well under a second per epoch."""
    return TrainConfig(hidden=8, q_hidden=6, batch_size=4, epochs=2, steps_per_epoch=10,
                       sync_c=5, replay_capacity=50, sup_steps=1, seed=3)
