import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vfpns.grid import PhaseGrid  # noqa: E402


@pytest.fixture(scope="session")
def grid16() -> PhaseGrid:
    return PhaseGrid.build(16, 32, 2 * math.pi, 6.0)


@pytest.fixture(scope="session")
def grid8() -> PhaseGrid:
    return PhaseGrid.build(8, 24, 2 * math.pi, 6.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def smooth_density(space, amplitude: float = 0.3, mode: int = 1) -> np.ndarray:
    x1, x2 = space.mesh
    k = 2 * math.pi / space.side
    dens = 1.0 + amplitude * np.cos(mode * k * x1) + 0.5 * amplitude * np.sin(k * x2)
    return dens / space.integrate(dens)


def random_dist(grid, rng, scale: float = 0.3) -> np.ndarray:
    """Positive random phase density: a perturbed Maxwellian mixture, unit mass."""
    from vfpns.entropy import maxwellian

    space = grid.space
    dens = smooth_density(space)
    x1, x2 = space.mesh
    drift = 0.6 * np.stack([np.sin(x2), np.cos(x1)])
    base = maxwellian(grid, dens, drift)
    noise = 1.0 + scale * rng.uniform(-1, 1, size=base.shape)
    dist = base * noise
    return dist / (np.sum(dist) * grid.cell_volume)
