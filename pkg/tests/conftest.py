import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from network.profiles import HistoricalProfile
from network.road_network import build_grid_network
from tests.factories import straight_road, synthetic_dataset


@pytest.fixture
def road():
    return straight_road()


@pytest.fixture(scope="session")
def grid3():
    return build_grid_network(3, 3, 150.0, 2, seed=1)


@pytest.fixture(scope="session")
def grid5():
    return build_grid_network(5, 5, 150.0, 2, seed=7)


@pytest.fixture
def flat_profile():
    """TTh 10 s and expected flow 3 on segments 0..19, over a 20-minute horizon."""
    return HistoricalProfile(bin_s=300, n_bins=4,
                             tth={s: np.full(4, 10.0) for s in range(20)},
                             expected_flow={s: np.full(4, 3.0) for s in range(20)})


@pytest.fixture
def dataset():
    return synthetic_dataset()
