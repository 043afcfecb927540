import numpy as np
import pytest

from hdl.circle import identity_map, sine_map
from hdl.grid import DiskGrid
from hdl.harmonic import solve_harmonic
from hdl.metric import MetricField, radial_bump, solve_prescribed_curvature


@pytest.fixture(scope="session")
def small_grid():
    return DiskGrid(32, 64, 0.95)


@pytest.fixture(scope="session")
def grid():
    return DiskGrid(64, 128, 0.95)


@pytest.fixture(scope="session")
def hyp_small(small_grid):
    return MetricField.hyperbolic(small_grid)


@pytest.fixture(scope="session")
def bump_metric_small(small_grid):
    return solve_prescribed_curvature(radial_bump(small_grid, 3.0, 4.0), small_grid)


@pytest.fixture(scope="session")
def sine_map_small(hyp_small, small_grid):
    return solve_harmonic(hyp_small, sine_map(0.5), small_grid)


@pytest.fixture(scope="session")
def sine_bump_small(bump_metric_small, small_grid):
    return solve_harmonic(bump_metric_small, sine_map(0.5), small_grid)


@pytest.fixture(scope="session")
def identity_small(hyp_small, small_grid):
    return solve_harmonic(hyp_small, identity_map(), small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
