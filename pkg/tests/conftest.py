import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from hamiltonian_core import FacetFamily, Side, SideHamiltonian  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def eikonal_sides():
    fam = FacetFamily([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    return SideHamiltonian(Side.RIGHT, facets=fam), SideHamiltonian(Side.LEFT, facets=fam)


@pytest.fixture
def gap_sides():
    """one_d_gap families frozen at the junction (cost shift 0 there)"""
    alpha = np.array([-1.0, 0.0, 1.0])
    right = FacetFamily(alpha, np.ones(3), 1.0 - alpha)
    left = FacetFamily(alpha, np.ones(3), 1.0 + alpha)
    return SideHamiltonian(Side.RIGHT, facets=right), SideHamiltonian(Side.LEFT, facets=left)


def random_side(rng, side):
    """Facet side with velocities of both signs"""
    k = int(rng.integers(2, 6))
    b = rng.uniform(-2.0, 2.0, size=k)
    b[0], b[1] = -abs(b[0]) - 0.1, abs(b[1]) + 0.1
    return SideHamiltonian(side, facets=FacetFamily(b, np.zeros(k), rng.uniform(-1.0, 1.0, size=k)))


@pytest.fixture
def make_random_side():
    return random_side
