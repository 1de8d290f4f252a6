"""Shared fixtures: small prebuilt worlds reused across test modules."""

import pytest

from kadmap.preimage import PreimageTable
from kadmap.scenario import build_static_world
from kadmap.simnet import SimConfig


@pytest.fixture(scope="session")
def small_world():
    """Static, fully bootstrapped, all-public world with some clients."""
    config = SimConfig(n_servers=300, n_clients=30, seed=11)
    return build_static_world(config)


@pytest.fixture(scope="session")
def world_500():
    """Static all-public 500-server world for lookup-accuracy checks."""
    return build_static_world(SimConfig(n_servers=500, seed=23))


@pytest.fixture(scope="session")
def world_1000():
    """Static all-public 1000-server world for bootstrap-shape checks."""
    return build_static_world(SimConfig(n_servers=1000, seed=29))


@pytest.fixture(scope="session")
def preimage_table_10():
    return PreimageTable.build(10)
