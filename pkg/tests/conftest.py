"""
Shared fixtures and markers for the tpcinr test suite.

Run all fast tests:
    pytest tests/

Include the desk-scale acceptance runs (minutes of CPU):
    TPCINR_RUN_SLOW=1 pytest tests/ -m slow

Run a specific test class:
    pytest tests/test_sampling.py::TestEntropyAllocate
"""

import os

import numpy as np
import pytest

from tpcinr.volume import SynthConfig, Volume3D, synth_tracks

RUN_SLOW_ENV = "TPCINR_RUN_SLOW"


def pytest_collection_modifyitems(config, items):
    """Skip ``slow`` tests unless TPCINR_RUN_SLOW=1."""
    if os.getenv(RUN_SLOW_ENV) == "1":
        return
    skip_slow = pytest.mark.skip(reason=f"desk-scale run; set {RUN_SLOW_ENV}=1 to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def sparse_volume() -> Volume3D:
    """Hand-built 8x8x4 volume with a short diagonal track and zeros elsewhere."""
    grid = np.zeros((8, 8, 4), dtype=np.uint16)
    for t in range(6):
        grid[t + 1, t + 1, t % 4] = 200 + 100 * t
    grid[2, 5, 1] = 64
    return Volume3D((8, 8, 4), grid.reshape(-1))


@pytest.fixture
def small_synth_config() -> SynthConfig:
    """A quick synthetic config: 1,280 cells at 5% occupancy."""
    return SynthConfig(dims=(16, 20, 4), n_tracks=3, target_occupancy=0.05, seed=1)


@pytest.fixture
def small_synth_volume(small_synth_config) -> Volume3D:
    return synth_tracks(small_synth_config)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test inputs."""
    return np.random.default_rng(12345)
