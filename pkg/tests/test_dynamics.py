import numpy as np
import pytest

from graphsnls import dynamics as dyn
from graphsnls import geometry as geo
from graphsnls.errors import DensityFloorError, FixedPointDivergedError
from graphsnls.graphs import LatticeSpec, build_graph, build_ring_lattice, complete_graph
from graphsnls.model import MadelungState, snls1_params, snls2_params

K2_STATE = MadelungState(rho=np.array([0.3, 0.7]), s=np.array([0.5, -0.2]))


# ------------------------------------------------------------------ noise

def test_brownian_determinism():
    a = dyn.sample_brownian(1234, 1e-3, 100)
    b = dyn.sample_brownian(1234, 1e-3, 100)
    assert np.array_equal(a.increments, b.increments)
    c = dyn.sample_brownian(1235, 1e-3, 100)
    assert not np.array_equal(a.increments, c.increments)


def test_brownian_mean_clt_bound():
    dt = 1e-3
    n = 10_000
    path = dyn.sample_brownian(77, dt, n)
    assert abs(float(np.mean(path.increments))) <= 4 * np.sqrt(dt / n)


def test_brownian_variance():
    dt = 1e-3
    n = 100_000
    path = dyn.sample_brownian(99, dt, n)
    var = float(np.var(path.increments))
    assert abs(var - dt) <= 0.05 * dt


def test_brownian_cumulative_starts_at_zero():
    path = dyn.sample_brownian(5, 0.1, 10)
    w = path.cumulative()
    assert w[0] == 0.0
    assert w[3] == pytest.approx(np.sum(path.increments[:3]), abs=0)


def test_brownian_rejects_bad_dt():
    with pytest.raises(ValueError):
        dyn.sample_brownian(1, 0.0, 10)


# ------------------------------------------------------------------ stepper

def test_stationary_point_unchanged(k2):
    p = snls1_params(2)
    st = MadelungState(rho=np.full(2, 0.5), s=np.full(2, 1.0))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1)
    out = dyn.step_midpoint(st, k2, p, 0.0, cfg)
    assert np.max(np.abs(out.rho - 0.5)) <= 1e-15
    assert np.max(np.abs(out.s - 1.0)) <= 1e-15


def test_step_mass_preserved(k2):
    p = snls1_params(2, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1)
    out = dyn.step_midpoint(K2_STATE, k2, p, 0.02, cfg)
    assert abs(float(np.sum(out.rho)) - 1.0) <= 1e-14


def test_step_density_floor_error(k2):
    p = snls1_params(2)
    st = MadelungState(rho=np.array([1e-13, 1.0 - 1e-13]), s=np.zeros(2))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1)
    with pytest.raises(DensityFloorError):
        dyn.step_midpoint(st, k2, p, 0.0, cfg)


def test_step_fixed_point_divergence_reported(k2):
    # huge dt makes the fixed-point map expansive
    p = snls1_params(2)
    cfg = dyn.IntegratorConfig(dt=50.0, n_steps=1, fixedpoint_maxiter=10)
    with pytest.raises((FixedPointDivergedError, DensityFloorError)):
        dyn.step_midpoint(K2_STATE, k2, p, 0.0, cfg)


def test_plane_wave_step_exact_s_decrement():
    g = build_ring_lattice(LatticeSpec(4, 1.0))
    K = np.pi / 2
    mu = K ** 2 / 2
    rho0 = np.full(4, 0.25)
    s0 = K * g.coords
    off = K * g.edge_disp - g.edge_diff(s0)
    p = snls1_params(4, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1)
    dw = 0.011
    out = dyn.step_midpoint(MadelungState(rho0, s0), g, p, dw, cfg, s_offset=off)
    assert np.max(np.abs(out.rho - 0.25)) <= 1e-14
    assert np.max(np.abs(out.s - (s0 - mu * cfg.dt - 0.3 * dw))) <= 1e-12


# ------------------------------------------------------------------ paths

def test_deterministic_h0_conservation(k2):
    p = snls1_params(2)
    st = MadelungState(rho=np.array([0.4, 0.6]), s=np.array([0.3, 0.0]))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    tr = dyn.integrate_path(st, k2, p, dyn.sample_brownian(1, cfg.dt, 1000), cfg)
    assert tr.completed
    assert dyn.energy_drift(k2, p, tr.rho, tr.s, "h0") <= 1e-8
    # second-order: halving dt cuts the drift ~4x
    cfg2 = dyn.IntegratorConfig(dt=5e-4, n_steps=2000)
    tr2 = dyn.integrate_path(st, k2, p, dyn.sample_brownian(1, cfg2.dt, 2000), cfg2)
    ratio = (dyn.energy_drift(k2, p, tr.rho, tr.s, "h0")
             / dyn.energy_drift(k2, p, tr2.rho, tr2.s, "h0"))
    assert 3.5 <= ratio <= 4.5


def test_constant_sigma_shifted_h0(k2):
    p = snls1_params(2, sigma=0.3)
    st = MadelungState(rho=np.array([0.4, 0.6]), s=np.array([0.3, 0.0]))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    tr = dyn.integrate_path(st, k2, p, dyn.sample_brownian(7, cfg.dt, 1000), cfg)
    assert dyn.shifted_hamiltonian_drift(tr, k2, p) <= 1e-8


def test_mass_along_path(k2, ring8):
    for g, preset in ((k2, snls1_params), (ring8, snls2_params)):
        n = g.n_nodes
        rho0 = np.full(n, 1.0 / n) + 0.02 * np.cos(2 * np.pi * np.arange(n) / n)
        rho0 /= rho0.sum()
        st = MadelungState(rho=rho0, s=0.1 * np.sin(2 * np.pi * np.arange(n) / n))
        p = preset(n, sigma=0.2)
        cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=500)
        tr = dyn.integrate_path(st, g, p, dyn.sample_brownian(3, cfg.dt, 500), cfg)
        assert tr.completed
        assert float(np.max(tr.mass_residual)) <= 1e-12


def test_partial_trajectory_on_floor(k2):
    # strong sigma contrast on an imbalanced state eventually dives
    p = snls1_params(2, sigma=np.array([4.0, 0.0]))
    st = MadelungState(rho=np.array([0.05, 0.95]), s=np.zeros(2))
    cfg = dyn.IntegratorConfig(dt=5e-2, n_steps=2000, fixedpoint_maxiter=8)
    tr = dyn.integrate_path(st, k2, p, dyn.sample_brownian(4, cfg.dt, 2000), cfg)
    assert not tr.completed
    assert tr.failure in ("density_floor", "fixed_point_diverged")
    assert len(tr.times) < 2001
    assert np.all(tr.rho > 0.0)


def test_sigma_zero_reduces_to_deterministic(k2):
    p0 = snls1_params(2)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=50)
    trs = [dyn.integrate_path(K2_STATE, k2, p0,
                              dyn.sample_brownian(seed, cfg.dt, 50), cfg)
           for seed in (1, 2, 3)]
    assert np.array_equal(trs[0].rho, trs[1].rho)
    assert np.array_equal(trs[1].s, trs[2].s)


# ------------------------------------------------------------------ ensembles

def test_ensemble_chunking_bit_identical(k2):
    p = snls1_params(2, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=200)
    seeds = list(range(40, 57))
    a = dyn.integrate_ensemble(K2_STATE, k2, p, seeds, cfg, parallelism=1)
    b = dyn.integrate_ensemble(K2_STATE, k2, p, seeds, cfg, parallelism=8)
    c = dyn.integrate_ensemble(K2_STATE, k2, p, seeds, cfg, parallelism=5)
    assert a.summary() == b.summary() == c.summary()
    assert np.array_equal(a.sup_h0, b.sup_h0)
    assert np.array_equal(a.min_density, c.min_density)


def test_ensemble_trajectories_match_single_path(k2):
    p = snls1_params(2, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=100)
    ens = dyn.integrate_ensemble(K2_STATE, k2, p, [11, 12], cfg,
                                 parallelism=2, keep_paths=True)
    single = dyn.integrate_path(K2_STATE, k2, p,
                                dyn.sample_brownian(12, cfg.dt, 100), cfg)
    assert np.array_equal(ens.trajectories[1].rho, single.rho)
    assert np.array_equal(ens.trajectories[1].s, single.s)


def test_ensemble_positivity_nonconstant_sigma():
    # sigma = (1, 0); every path stays interior and the dip distribution
    # is reported (no fixed lower-bound constant is asserted).
    g = build_graph(2, [(0, 1, 0.5)])
    p = snls1_params(2, sigma=np.array([1.0, 0.0]))
    st = MadelungState(rho=np.full(2, 0.5), s=np.zeros(2))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    ens = dyn.integrate_ensemble(st, g, p, list(range(1000)), cfg, parallelism=4)
    assert ens.failures == []
    assert float(np.nanmin(ens.min_density)) > 0.0
    assert set(ens.min_density_quantiles) == {
        "q00", "q01", "q05", "q25", "q50", "q75", "q100"}
    assert ens.moments["H0_sup_p1"] is not None
    assert ens.moments["H0_sup_p2"] >= ens.moments["H0_sup_p1"] ** 2 - 1e-12


def test_ensemble_rejects_empty_seeds(k2):
    p = snls1_params(2)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=10)
    with pytest.raises(ValueError):
        dyn.integrate_ensemble(K2_STATE, k2, p, [], cfg)


# ------------------------------------------------------------------ checks

def test_transverse_alpha_zero(k2):
    p = snls1_params(2, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=100)
    dev = dyn.transverse_check(K2_STATE, k2, p, 0.0,
                               dyn.sample_brownian(5, cfg.dt, 100), cfg)
    assert dev <= 1e-14


def test_transverse_alpha_one(k2):
    p = snls1_params(2, sigma=0.3)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    dev = dyn.transverse_check(K2_STATE, k2, p, 1.0,
                               dyn.sample_brownian(5, cfg.dt, 1000), cfg)
    # constant potential shifts commute with the midpoint map exactly, so
    # the deviation sits at roundoff, far below the second-order bound
    assert dev <= 5e-6


def test_reversibility_zero_steps(k2):
    p = snls1_params(2)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=0)
    err = dyn.reversibility_check(K2_STATE, k2, p,
                                  dyn.sample_brownian(1, 1e-3, 0), cfg)
    assert err == 0.0


def test_reversibility_tracks_solver_tolerance(k2):
    p = snls1_params(2, sigma=0.3)
    noise = dyn.sample_brownian(6, 1e-3, 500)
    tight = dyn.reversibility_check(
        K2_STATE, k2, p, noise,
        dyn.IntegratorConfig(dt=1e-3, n_steps=500, fixedpoint_tol=1e-13))
    loose = dyn.reversibility_check(
        K2_STATE, k2, p, noise,
        dyn.IntegratorConfig(dt=1e-3, n_steps=500, fixedpoint_tol=1e-4))
    assert tight <= 1e-9
    assert loose >= 10 * tight


def test_snls2_h1_pathwise_conserved(k2):
    p = snls2_params(2)
    st = MadelungState(rho=np.array([0.48, 0.52]), s=np.array([0.05, 0.0]))
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    worst = 0.0
    for seed in range(20):
        tr = dyn.integrate_path(st, k2, p,
                                dyn.sample_brownian(500 + seed, cfg.dt, 1000), cfg)
        assert tr.completed
        worst = max(worst, dyn.energy_drift(k2, p, tr.rho, tr.s, "h1"))
    assert worst <= 1e-5


def test_simulated_plane_wave_closed_form():
    g = build_ring_lattice(LatticeSpec(8, 0.5))
    mode = 3
    K = 2 * np.pi * mode / (8 * 0.5)
    mu = K ** 2 / 2
    sigma_bar = 0.3
    rho0 = np.full(8, 1 / 8)
    s0 = K * g.coords
    off = K * g.edge_disp - g.edge_diff(s0)
    p = snls1_params(8, sigma=sigma_bar)
    cfg = dyn.IntegratorConfig(dt=1e-3, n_steps=1000)
    tr = dyn.integrate_path(MadelungState(rho0, s0), g, p,
                            dyn.sample_brownian(11, cfg.dt, 1000), cfg,
                            s_offset=off)
    closed = s0[None, :] - mu * tr.times[:, None] - sigma_bar * tr.w[:, None]
    assert float(np.max(np.abs(tr.rho - 1 / 8))) <= 1e-10
    assert float(np.max(np.abs(tr.s - closed))) <= 1e-10
