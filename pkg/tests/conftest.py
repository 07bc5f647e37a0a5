"""
Pytest Configuration and Shared Fixtures
"""

import json
import os
import sys
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from stochastics.innovations import InnovationSpec
from stochastics.processes import simulate_series
from stochastics.streams import NoiseStream


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def gaussian_spec():
    """i.i.d. N(0, 1) innovations (single unit MA coefficient)."""
    return InnovationSpec(family="LinearMA", coefficients=(1.0,))


@pytest.fixture(scope="session")
def stable_spec():
    """Symmetric 1.5-stable innovations."""
    return InnovationSpec(family="StableIID", alpha=1.5)


@pytest.fixture(scope="session")
def long_memory_spec():
    """Gaussian moving average with c_j = j^-0.7."""
    return InnovationSpec(family="LinearMA", theta=0.7)


@pytest.fixture(scope="function")
def stream():
    """A fixed random stream."""
    return NoiseStream(seed=20240101, stream_id=0)


@pytest.fixture(scope="function")
def unit_root_series(gaussian_spec, stream):
    """Gaussian random walk of length 200."""
    return simulate_series(gaussian_spec, 200, stream)


@pytest.fixture(scope="function")
def small_config_data():
    """Cheap experiment config: Gaussian walk, two sample sizes, coarse limit grid."""
    return {
        "spec": {"family": "LinearMA", "coefficients": [1.0]},
        "n_list": [32, 64],
        "R": 100,
        "statistic": "MarkedSup",
        "F_id": "normal",
        "g_id": "identity",
        "grid_size": 11,
        "k": 16,
        "base_seed": 7,
    }


@pytest.fixture(scope="function")
def write_config(tmp_path):
    """Write a config mapping to a JSON file and return its path."""
    def _write(data, name="config.json"):
        path = tmp_path / name
        with open(path, "w") as f:
            json.dump(data, f)
        return path
    return _write


@pytest.fixture(scope="session")
def api_test_client():
    """Create FastAPI test client."""
    from fastapi.testclient import TestClient
    from backend.api import app
    return TestClient(app)
