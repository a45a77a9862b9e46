import numpy as np
import pytest

from graphsnls import dispersion as disp
from graphsnls.errors import NotALatticeError
from graphsnls.graphs import LatticeSpec, build_ring_lattice, complete_graph


def ring(n, dx):
    return build_ring_lattice(LatticeSpec(n, dx))


def test_plane_wave_state_mode_zero_constant():
    g = ring(8, 0.5)
    st = disp.plane_wave_state(disp.PlaneWaveSpec(0), g)
    assert np.all(st.s == 0.0)
    assert np.allclose(st.rho, 1 / 8)


def test_plane_wave_state_n4_values():
    g = ring(4, 1.0)
    st = disp.plane_wave_state(disp.PlaneWaveSpec(1), g)
    assert np.allclose(st.s, [0, np.pi / 2, np.pi, 3 * np.pi / 2])
    assert np.allclose(st.rho, 0.25)
    assert float(np.sum(st.rho)) == pytest.approx(1.0, abs=0)


def test_plane_wave_requires_lattice():
    with pytest.raises(NotALatticeError):
        disp.plane_wave_state(disp.PlaneWaveSpec(1), complete_graph(3))


def test_plane_wave_amplitude_must_normalize():
    g = ring(4, 1.0)
    with pytest.raises(ValueError):
        disp.plane_wave_state(disp.PlaneWaveSpec(1, amplitude=1.0), g)


def test_winding_offset_multiples_of_two_pi():
    g = ring(8, 0.5)
    for m in range(8):
        off = disp.winding_offset(disp.PlaneWaveSpec(m), g)
        assert np.allclose(off / (2 * np.pi), np.round(off / (2 * np.pi)),
                           atol=1e-12)


@pytest.mark.parametrize("n,dx", [(4, 1.0), (8, 0.5), (16, 0.1)])
@pytest.mark.parametrize("which", ["snls1", "snls2"])
def test_nonlinear_residual_all_modes(n, dx, which):
    g = ring(n, dx)
    for m in range(n):
        r_rho, r_s = disp.nonlinear_dispersion_residual(
            disp.PlaneWaveSpec(m), g, sigma_bar=0.3, which=which)
        assert r_rho <= 1e-12
        assert r_s <= 1e-12


def test_nonlinear_residual_example_values():
    r_rho, r_s = disp.nonlinear_dispersion_residual(
        disp.PlaneWaveSpec(1), ring(4, 1.0), which="snls1")
    assert max(r_rho, r_s) <= 1e-13
    r_rho, r_s = disp.nonlinear_dispersion_residual(
        disp.PlaneWaveSpec(3), ring(8, 0.5), which="snls1")
    assert max(r_rho, r_s) <= 1e-12


def test_second_difference_residual_closed_form():
    # K dx = pi/2 at dx = 0.1: |K^2/2 - (1 - cos(K dx))/dx^2| = 23.370
    g = ring(16, 0.1)
    st = disp.LinearStencil.second_difference(0.1)
    spec = disp.PlaneWaveSpec(4)    # K = 2 pi 4 / 1.6 -> K dx = pi/2
    assert spec.wavenumber(g) * 0.1 == pytest.approx(np.pi / 2, rel=1e-15)
    res = disp.linear_dispersion_residual(st, spec, g)
    expected = abs((np.pi / 2) ** 2 / 2 - (1 - np.cos(np.pi / 2))) / 0.1 ** 2
    assert res == pytest.approx(expected, rel=1e-12)
    assert res == pytest.approx(23.370, abs=1e-3)
    # symmetric stencil has a purely real defect
    assert abs(disp.linear_dispersion_defect(st, spec, g).imag) <= 1e-12


def test_second_difference_residual_small_k_tail():
    # residual -> 0 as O(K^4 dx^2) for the second difference
    dx = 0.1
    st = disp.LinearStencil.second_difference(dx)
    g = ring(256, dx)
    res = []
    for m in (1, 2, 4):
        spec = disp.PlaneWaveSpec(m)
        res.append(disp.linear_dispersion_residual(st, spec, g))
    # doubling K multiplies the defect by ~16
    assert res[1] / res[0] == pytest.approx(16.0, rel=0.05)
    assert res[2] / res[1] == pytest.approx(16.0, rel=0.2)
    # Taylor prediction K^4 dx^2 / 24
    k = disp.PlaneWaveSpec(1).wavenumber(g)
    assert res[0] == pytest.approx(k ** 4 * dx ** 2 / 24.0, rel=1e-2)


def test_mode_zero_residuals_vanish():
    g = ring(16, 0.1)
    st = disp.LinearStencil.second_difference(0.1)
    assert disp.linear_dispersion_residual(st, disp.PlaneWaveSpec(0), g) == 0.0
    r_rho, r_s = disp.nonlinear_dispersion_residual(disp.PlaneWaveSpec(0), g)
    assert r_rho == 0.0 and r_s == 0.0


def test_linear_defect_exceeds_tolerance_away_from_origin():
    g = ring(16, 0.1)
    st = disp.LinearStencil.second_difference(0.1)
    for m in range(16):
        spec = disp.PlaneWaveSpec(m)
        if abs(spec.wavenumber(g)) * 0.1 >= np.pi / 4:
            assert disp.linear_dispersion_residual(st, spec, g) > 1e-3


def test_linear_defect_grows_with_mode():
    # bounded symbol vs quadratic growth
    dx = 0.1
    g = ring(64, dx)
    st = disp.LinearStencil.second_difference(dx)
    big = disp.PlaneWaveSpec(63)
    mu = big.frequency(g)
    bound = 0.5 * sum(abs(c) for c in st.coeffs)
    assert disp.linear_dispersion_residual(st, big, g) >= mu - bound


def test_scan_rows_shape_and_content():
    g = ring(16, 0.1)
    st = disp.LinearStencil.second_difference(0.1)
    rows = disp.scan_wavenumbers(g, 0.0, [st], range(16))
    assert len(rows) == 32
    nl = [r for r in rows if r["scheme"] == "nonlinear"]
    assert all(max(abs(r["residual_real"]), abs(r["residual_imag"])) <= 1e-12
               for r in nl)
    lin = [r for r in rows if r["scheme"] == "second_difference"]
    assert len(lin) == 16


def test_scan_empty_stencils():
    g = ring(4, 1.0)
    rows = disp.scan_wavenumbers(g, 0.0, [], [0, 1])
    assert [r["scheme"] for r in rows] == ["nonlinear", "nonlinear"]
