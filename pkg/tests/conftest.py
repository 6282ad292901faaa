#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os

import hypothesis
import numpy as np
import pytest

from app.utils.dataset import LabDataset
from app.utils.flow_core import FlowConfig, init_model
from app.utils.pipeline import StegoModel, StegoSettings
from app.utils.toy_data import generate_toy_images
from app.utils.training import TrainConfig, train_stage1

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("default", deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="uruchamia treningi w małej skali")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="wymaga --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_flow_config(layers=2, size=16, seed=0, hidden=16):
    return FlowConfig(layers=layers, hidden_channels=hidden, cond_channels=8, clamp=2.0,
                      height=size, width=size, seed=seed)


def quick_train_config(**changes):
    values = dict(lr=1e-3, batch_size=8, epochs=2, rounds=1, iters_per_round=20,
                  plateau_window=10, seed=0)
    values.update(changes)
    return TrainConfig(**values)


@pytest.fixture(scope="session")
def toy_images():
    return generate_toy_images(24, 16, seed=0)


@pytest.fixture(scope="session")
def toy_dataset(toy_images):
    return LabDataset.from_rgb_images(toy_images)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def stage1_model(toy_dataset):
    """Model po krótkim etapie 1 (2 warstwy, 16x16): wystarcza do testów kanału idealnego."""
    flow = init_model(tiny_flow_config())
    train_stage1(toy_dataset, quick_train_config(), flow)
    return StegoModel(flow, StegoSettings())


@pytest.fixture(scope="session")
def toy_scale():
    """Zbiór 200 obrazów 16x16 i model K=4 po pełnym etapie 1 w małej skali."""
    images = generate_toy_images(200, 16, seed=7)
    dataset = LabDataset.from_rgb_images(images)
    flow = init_model(tiny_flow_config(layers=4, hidden=32))
    config = TrainConfig(lr=1e-3, batch_size=48, epochs=30, rounds=3, iters_per_round=300,
                         plateau_window=50, seed=0)
    train_stage1(dataset, config, flow)
    return dataset, StegoModel(flow, StegoSettings()), config
