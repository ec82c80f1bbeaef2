import numpy as np
import pytest

from voltmpc.grid_model import load_network, to_per_unit
from voltmpc.sysid import identify_benchmark


@pytest.fixture(scope="session")
def network():
    return load_network()


@pytest.fixture(scope="session")
def pu_net(network):
    return to_per_unit(network)


@pytest.fixture(scope="session")
def model_7am(network):
    """Benchmark impulse-response model, 7 a.m., M = 90 (identified once)."""
    return identify_benchmark(network, "7am", 90)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
