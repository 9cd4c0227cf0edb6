import numpy as np
import pytest

from pathtaylor.brownian import SamplePath, TimeGrid, simulate_ensemble, simulate_path


@pytest.fixture(scope="session")
def grid():
    return TimeGrid(1.0, 512)


@pytest.fixture(scope="session")
def path1(grid):
    return simulate_path(grid, 1, seed=11)


@pytest.fixture(scope="session")
def path2(grid):
    return simulate_path(grid, 2, seed=12)


def paths_of(grid, d, M, seed):
    w = simulate_ensemble(grid, d, M, seed)
    return [SamplePath(grid, w[i], seed=seed, stream=i) for i in range(M)]


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))
