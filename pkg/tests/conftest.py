import numpy as np
import pytest

from paulilab.problem import build_grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid2():
    return build_grid(2, 10, 1.5)


def smooth_partition(grid, centers, width):
    """Quadratic partition of unity ``sum psi_j^2 = 1`` from Gaussian bumps."""
    x = grid.coordinates()
    bumps = [np.exp(-np.sum((x - np.reshape(c, (-1,) + (1,) * grid.dimension)) ** 2, axis=0)
                    / width**2) for c in centers]
    norm = np.sqrt(sum(b**2 for b in bumps))
    return [b / norm for b in bumps]
