import numpy as np
import pytest

from graphsnls import complexform as cf
from graphsnls import geometry as geo
from graphsnls.errors import ZeroAmplitudeError
from graphsnls.graphs import LatticeSpec, build_ring_lattice
from graphsnls.model import snls1_params

from conftest import random_interior_state


def test_forward_simple(k2):
    u = cf.madelung_to_complex(np.array([0.5, 0.5]), np.zeros(2))
    assert np.allclose(u, np.sqrt(0.5) * np.ones(2))


def test_round_trip_random_states():
    rng = np.random.default_rng(17)
    for _ in range(50):
        rho, s = random_interior_state(5, rng, s_scale=6.0)
        u = cf.madelung_to_complex(rho, s)
        rho2, s2 = cf.complex_to_madelung(u)
        assert np.max(np.abs(rho2 - rho)) <= 1e-14
        # S recovered modulo 2 pi per node
        wrapped = (s2 - s + np.pi) % (2 * np.pi) - np.pi
        assert np.max(np.abs(wrapped)) <= 1e-13


def test_round_trip_with_branch_hint():
    rng = np.random.default_rng(18)
    rho, s = random_interior_state(4, rng, s_scale=20.0)   # many branches away
    u = cf.madelung_to_complex(rho, s)
    _, s2 = cf.complex_to_madelung(u, branch_hint=s)
    assert np.max(np.abs(s2 - s)) <= 1e-12


def test_zero_amplitude_rejected():
    with pytest.raises(ZeroAmplitudeError):
        cf.complex_to_madelung(np.array([1.0 + 0j, 1e-15 + 0j]))


def test_constant_u_laplacian_zero(triangle):
    p = snls1_params(3)
    u = np.full(3, np.sqrt(1 / 3) + 0j)
    lap = cf.nonlinear_laplacian(triangle, u, p)
    assert np.max(np.abs(lap)) == 0.0


@pytest.mark.parametrize("n,dx,m", [(4, 1.0, 1), (8, 0.5, 3), (16, 0.1, 4)])
def test_plane_wave_laplacian_eigenrelation(n, dx, m):
    g = build_ring_lattice(LatticeSpec(n, dx))
    K = 2 * np.pi * m / (n * dx)
    rho = np.full(n, 1.0 / n)
    s = K * g.coords
    offset = K * g.edge_disp - g.edge_diff(s)   # exact 2*pi multiples
    u = cf.madelung_to_complex(rho, s)
    p = snls1_params(n)
    lap = cf.nonlinear_laplacian(g, u, p, branch_hint=s, s_offset=offset)
    assert np.max(np.abs(lap + K ** 2 * u)) <= 1e-12 * max(1.0, K ** 2)


def test_complex_equation_residual_random(triangle, ring8):
    rng = np.random.default_rng(23)
    for g in (triangle, ring8):
        p = snls1_params(g.n_nodes,
                         V=rng.normal(size=g.n_nodes) * 0.3,
                         W=0.0, kappa=0.1)
        for _ in range(20):
            rho, s = random_interior_state(g.n_nodes, rng)
            u = cf.madelung_to_complex(rho, s)
            assert cf.complex_equation_residual(g, u, p, branch_hint=s) <= 1e-10


def test_complex_equation_residual_with_interaction(triangle):
    rng = np.random.default_rng(29)
    W = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 2.0], [0.5, 2.0, 0.0]])
    p = snls1_params(3, W=W)
    for _ in range(10):
        rho, s = random_interior_state(3, rng)
        u = cf.madelung_to_complex(rho, s)
        assert cf.complex_equation_residual(triangle, u, p, branch_hint=s) <= 1e-10


def test_complex_drift_jacobian_linearizes(triangle):
    rng = np.random.default_rng(41)
    p = snls1_params(3, V=np.array([0.1, 0.4, -0.3]))
    rho, s = random_interior_state(3, rng)
    u = cf.madelung_to_complex(rho, s)
    A = cf.complex_drift_jacobian(triangle, u, p, branch_hint=s)
    assert A.shape == (6, 6)
    du = (rng.normal(size=3) + 1j * rng.normal(size=3)) * 1e-7
    fp = cf.complex_drift(triangle, u + du, p, branch_hint=s)
    fm = cf.complex_drift(triangle, u - du, p, branch_hint=s)
    fd = cf.split_complex(0.5 * (fp - fm))
    lin = A @ cf.split_complex(du)
    assert np.allclose(lin, fd, rtol=1e-5, atol=1e-13)


def test_split_join_roundtrip():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    assert np.array_equal(cf.join_complex(cf.split_complex(z)), z)
