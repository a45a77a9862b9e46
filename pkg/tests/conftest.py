import numpy as np
import pytest

from graphsnls.graphs import LatticeSpec, build_graph, build_ring_lattice, complete_graph
from graphsnls.model import snls1_params


@pytest.fixture
def k2():
    return complete_graph(2)


@pytest.fixture
def triangle():
    return build_graph(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)])


@pytest.fixture
def ring8():
    return build_ring_lattice(LatticeSpec(8, 0.5))


def random_interior_state(n, rng, margin=0.1, s_scale=1.0):
    """Interior density bounded away from the boundary plus a random phase."""
    rho = margin + rng.uniform(0.0, 1.0, n)
    rho = rho / rho.sum()
    s = s_scale * rng.normal(size=n)
    return rho, s


@pytest.fixture
def free_params_3():
    return snls1_params(3)
