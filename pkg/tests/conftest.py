"""Pytest configuration and shared fixtures."""

import logging

import pytest

from rankmvml.dataset import InjectionConfig, inject_missing, synth_dataset
from rankmvml.model import ModelConfig, init_model

logger = logging.getLogger(__name__)


@pytest.fixture
def tiny_dataset():
    """Complete 24-sample, 2-view, 4-label dataset."""
    return synth_dataset(24, 2, 4, dims=[5, 4], noise=0.1, seed=3)


@pytest.fixture
def incomplete_dataset(tiny_dataset):
    return inject_missing(tiny_dataset, InjectionConfig(0.3, 0.5, seed=1))


@pytest.fixture
def tiny_model_config():
    return ModelConfig(d_e=3, hidden=(4,), disc_hidden=4)


@pytest.fixture
def tiny_model(tiny_dataset, tiny_model_config):
    return init_model(
        tiny_dataset.dims, 3, tiny_dataset.c, seed=7, config=tiny_model_config
    )


def pytest_runtest_setup(item):
    """Called before each test runs."""
    logger.debug(f"Starting test: {item.name}")


def pytest_runtest_teardown(item, nextitem):
    """Called after each test completes."""
    logger.debug(f"Completed test: {item.name}")


def pytest_sessionstart(session):
    logger.info("=" * 60)
    logger.info("rankmvml test session starting")
    logger.info("=" * 60)


def pytest_sessionfinish(session, exitstatus):
    logger.info("=" * 60)
    logger.info(f"rankmvml test session complete (exit status {exitstatus})")
    logger.info("=" * 60)
