"""Stratonovich time integration of the stochastic flows in (rho, S).

Scheme: implicit midpoint,

    y' = y + f0(ybar) dt + f1(ybar) clip(dW),   ybar = (y + y')/2,

solved by fixed-point iteration. f0 is the canonical H0 field and f1 the
canonical H1 field, so mass conservation is structural (the rho component
of both fields is a sum of antisymmetric edge fluxes). The scheme is
time-symmetric, which makes the reversibility check meaningful, and
Stratonovich-consistent as dt -> 0.

Ensembles integrate as one vectorized batch over paths. A path's
fixed-point iterates freeze at its own convergence step and every
cross-edge reduction runs in a fixed order, so per-path results are
bit-identical no matter how the batch is chunked across "workers"
(the parallelism flag chunks the seed list; aggregation is in seed order).

The recorded Brownian path is the cumulative sum of the *clipped*
increments actually applied, so pathwise identities (shifted-Hamiltonian
conservation, plane-wave closed forms) hold exactly as implemented.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .complexform import madelung_to_complex
from .errors import DensityFloorError, FixedPointDivergedError
from .graphs import Graph
from .model import MadelungState, ModelParams

_FAIL_NONE = 0
_FAIL_FLOOR = 1
_FAIL_DIVERGED = 2

FAILURE_NAMES = {_FAIL_FLOOR: "density_floor", _FAIL_DIVERGED: "fixed_point_diverged"}


@dataclass(frozen=True)
class NoisePath:
    """Scalar Brownian increments, regenerable bit-exactly from the seed."""

    seed: int
    dt: float
    n_steps: int
    increments: np.ndarray   # (n_steps,) ~ Normal(0, dt), unclipped

    def cumulative(self) -> np.ndarray:
        w = np.zeros(self.n_steps + 1)
        np.cumsum(self.increments, out=w[1:])
        return w


def sample_brownian(seed: int, dt: float, n_steps: int) -> NoisePath:
    """Counter-based (Philox) increments; deterministic given the seed."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    inc = gen.standard_normal(int(n_steps)) * np.sqrt(dt)
    inc.flags.writeable = False
    return NoisePath(seed=int(seed), dt=float(dt), n_steps=int(n_steps),
                     increments=inc)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    n_steps: int
    scheme: str = "midpoint_stratonovich"
    fixedpoint_tol: float = 1e-12
    fixedpoint_maxiter: int = 50
    increment_clip: float = 6.0      # |dW| <= clip * sqrt(dt)
    density_floor: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.fixedpoint_tol <= 0.0 or self.density_floor <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.scheme != "midpoint_stratonovich":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


@dataclass
class BatchPaths:
    """Raw arrays for a batch of integrated paths (time axis first)."""

    times: np.ndarray        # (n+1,)
    rho: np.ndarray          # (n+1, M, N)
    s: np.ndarray            # (n+1, M, N)
    w: np.ndarray            # (n+1, M) effective (clipped) Brownian path
    mass_residual: np.ndarray            # (n+1, M)
    min_rho: np.ndarray                  # (n+1, M)
    h0: np.ndarray | None                # (n+1, M) if recorded
    fail_step: np.ndarray    # (M,) int, n_steps+1 if completed
    fail_code: np.ndarray    # (M,) int

    @property
    def n_paths(self) -> int:
        return self.rho.shape[1]

    @property
    def completed(self) -> np.ndarray:
        return self.fail_code == _FAIL_NONE


@dataclass
class Trajectory:
    """Single-path states plus per-step diagnostics."""

    times: np.ndarray
    rho: np.ndarray          # (n_kept+1, N)
    s: np.ndarray
    w: np.ndarray
    mass_residual: np.ndarray
    min_rho: np.ndarray
    h0: np.ndarray | None
    noise: NoisePath | None
    completed: bool
    failure: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def state(self, n: int) -> MadelungState:
        return MadelungState(rho=self.rho[n], s=self.s[n], t=float(self.times[n]))

    def complex_path(self) -> np.ndarray:
        return madelung_to_complex(self.rho, self.s)


def _step_batch(g: Graph, params: ModelParams, rho0, s0, dt, dw, cfg,
                v_now=None, sigma_now=None, s_offset=None, skip=None):
    """One implicit midpoint step on a (M, N) batch.

    Returns (rho1, s1, fail_code (M,)). Rows in `skip` are left untouched.
    A row's iterate sequence depends only on its own values, so results
    are identical however the batch is partitioned.
    """
    m, n = rho0.shape
    floor = cfg.density_floor
    uniform = np.full(n, 1.0 / n)

    rho1 = rho0.copy()
    s1 = s0.copy()
    fail = np.zeros(m, dtype=np.int8)
    if skip is not None:
        fail = np.where(skip, np.int8(-1), fail)   # sentinel: not advanced
    converged = fail != 0

    h0_mix = params.h0_mix()
    h1_mix = params.h1_mix()
    dwc = dw[:, None]

    for _ in range(cfg.fixedpoint_maxiter):
        if bool(np.all(converged | (fail > 0))):
            break
        rbar = 0.5 * (rho0 + rho1)
        sbar = 0.5 * (s0 + s1)
        low = np.min(rbar, axis=-1) <= floor
        newly_floored = low & ~converged & (fail == 0)
        fail[newly_floored] = _FAIL_FLOOR
        rbar = np.where(low[:, None], uniform, rbar)   # safe values, discarded

        d0r, d0s = geo.mix_field(g, rbar, sbar, params, h0_mix,
                                 v_now, sigma_now, s_offset)
        d1r, d1s = geo.mix_field(g, rbar, sbar, params, h1_mix,
                                 v_now, sigma_now, s_offset)
        cand_rho = rho0 + dt * d0r + dwc * d1r
        cand_s = s0 + dt * d0s + dwc * d1s

        resid = np.maximum(np.max(np.abs(cand_rho - rho1), axis=-1),
                           np.max(np.abs(cand_s - s1), axis=-1))
        update = ~converged & (fail == 0)
        rho1 = np.where(update[:, None], cand_rho, rho1)
        s1 = np.where(update[:, None], cand_s, s1)
        converged = converged | (update & (resid < cfg.fixedpoint_tol))

    fail[~converged & (fail == 0)] = _FAIL_DIVERGED
    final_low = np.min(rho1, axis=-1) <= floor
    fail[final_low & (fail == 0)] = _FAIL_FLOOR
    fail[fail == -1] = 0
    return rho1, s1, fail


def step_midpoint(state: MadelungState, g: Graph, params: ModelParams,
                  dw: float, cfg: IntegratorConfig, v_now=None,
                  sigma_now=None, s_offset=None) -> MadelungState:
    """Single implicit midpoint step; raises on floor hit or divergence."""
    clip = cfg.increment_clip * np.sqrt(cfg.dt)
    dwe = float(np.clip(dw, -clip, clip))
    rho1, s1, fail = _step_batch(
        g, params, state.rho[None, :], state.s[None, :], cfg.dt,
        np.array([dwe]), cfg, v_now=v_now, sigma_now=sigma_now,
        s_offset=s_offset)
    if fail[0] == _FAIL_FLOOR:
        raise DensityFloorError(
            f"density reached the floor {cfg.density_floor} during a step")
    if fail[0] == _FAIL_DIVERGED:
        raise FixedPointDivergedError(
            f"fixed point above tol {cfg.fixedpoint_tol} after "
            f"{cfg.fixedpoint_maxiter} iterations")
    return MadelungState(rho=rho1[0], s=s1[0], t=state.t + cfg.dt)


def integrate_batch(g: Graph, params: ModelParams, rho0: np.ndarray,
                    s0: np.ndarray, increments: np.ndarray,
                    cfg: IntegratorConfig, v_path=None, sigma_path=None,
                    s_offset=None, record_energy: bool = True,
                    t0: float = 0.0) -> BatchPaths:
    """Integrate all paths of a batch; failed paths freeze at their last state.

    increments: (M, n_steps) raw Brownian increments (clipped here).
    v_path / sigma_path: optional (n_steps, N) piecewise-constant overrides.
    """
    increments = np.atleast_2d(increments)
    m = increments.shape[0]
    n_steps = cfg.n_steps
    if increments.shape[1] != n_steps:
        raise ValueError(f"increments have {increments.shape[1]} steps, "
                         f"config says {n_steps}")
    n = g.n_nodes
    clip = cfg.increment_clip * np.sqrt(cfg.dt)
    dw_eff = np.clip(increments, -clip, clip)

    rho = np.empty((n_steps + 1, m, n))
    s = np.empty((n_steps + 1, m, n))
    w = np.zeros((n_steps + 1, m))
    rho[0] = np.broadcast_to(rho0, (m, n))
    s[0] = np.broadcast_to(s0, (m, n))

    fail_step = np.full(m, n_steps + 1, dtype=np.int64)
    fail_code = np.zeros(m, dtype=np.int8)

    for k in range(n_steps):
        alive = fail_code == _FAIL_NONE
        v_now = None if v_path is None else v_path[k]
        sig_now = None if sigma_path is None else sigma_path[k]
        rho1, s1, fail = _step_batch(g, params, rho[k], s[k], cfg.dt,
                                     dw_eff[:, k], cfg, v_now=v_now,
                                     sigma_now=sig_now, s_offset=s_offset,
                                     skip=~alive)
        newly = alive & (fail != 0)
        fail_code[newly] = fail[newly]
        fail_step[newly] = k
        ok = alive & (fail == 0)
        rho[k + 1] = np.where(ok[:, None], rho1, rho[k])
        s[k + 1] = np.where(ok[:, None], s1, s[k])
        w[k + 1] = np.where(ok, w[k] + dw_eff[:, k], w[k])

    times = t0 + cfg.dt * np.arange(n_steps + 1)
    mass_residual = np.abs(np.sum(rho, axis=-1) - 1.0)
    min_rho = np.min(rho, axis=-1)
    h0 = None
    if record_energy:
        h0 = np.empty((n_steps + 1, m))
        for k in range(n_steps + 1):
            v_now = None if v_path is None else v_path[min(k, n_steps - 1)]
            h0[k] = geo.energy(g, rho[k], s[k], params, params.h0_mix(),
                               v_now=v_now, s_offset=s_offset)
    return BatchPaths(times=times, rho=rho, s=s, w=w,
                      mass_residual=mass_residual, min_rho=min_rho, h0=h0,
                      fail_step=fail_step, fail_code=fail_code)


def integrate_path(init: MadelungState, g: Graph, params: ModelParams,
                   noise: NoisePath, cfg: IntegratorConfig, v_path=None,
                   sigma_path=None, s_offset=None,
                   record_energy: bool = True) -> Trajectory:
    """Full trajectory; aborts cleanly with a partial one on failure."""
    geo.require_interior(init.rho)
    batch = integrate_batch(g, params, init.rho, init.s,
                            noise.increments[None, :], cfg, v_path=v_path,
                            sigma_path=sigma_path, s_offset=s_offset,
                            record_energy=record_energy, t0=init.t)
    keep = int(min(batch.fail_step[0], cfg.n_steps)) + 1
    code = int(batch.fail_code[0])
    return Trajectory(
        times=batch.times[:keep],
        rho=batch.rho[:keep, 0],
        s=batch.s[:keep, 0],
        w=batch.w[:keep, 0],
        mass_residual=batch.mass_residual[:keep, 0],
        min_rho=batch.min_rho[:keep, 0],
        h0=None if batch.h0 is None else batch.h0[:keep, 0],
        noise=noise,
        completed=code == _FAIL_NONE,
        failure=FAILURE_NAMES.get(code),
    )


# ------------------------------------------------------------------ ensembles

@dataclass
class EnsembleResult:
    seeds: list
    n_paths: int
    failures: list               # dicts: {path, seed, step, reason}
    sup_h0: np.ndarray           # (M,) nan for failed paths
    min_density: np.ndarray      # (M,) nan for failed paths
    moments: dict
    min_density_quantiles: dict
    max_mass_residual: float
    trajectories: list | None = None

    def summary(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "failures": self.failures,
            "moments": self.moments,
            "min_density_quantiles": self.min_density_quantiles,
            "max_mass_residual": self.max_mass_residual,
        }


_QUANTILES = (0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 1.0)


def integrate_ensemble(init: MadelungState, g: Graph, params: ModelParams,
                       seeds, cfg: IntegratorConfig, parallelism: int = 1,
                       keep_paths: bool = False, v_path=None,
                       sigma_path=None, s_offset=None) -> EnsembleResult:
    """Integrate one path per seed; summaries are independent of chunking.

    Per-path failures are collected, not fatal. Moments E[sup_t H0^p] for
    p in {1, 2} are estimated over completed paths.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("seed list must be nonempty")
    geo.require_interior(init.rho)
    m = len(seeds)
    parallelism = max(1, min(int(parallelism), m))

    increments = np.stack([
        sample_brownian(sd, cfg.dt, cfg.n_steps).increments for sd in seeds])

    chunks = np.array_split(np.arange(m), parallelism)
    results = []
    for idx in chunks:
        if idx.size == 0:
            continue
        results.append((idx, integrate_batch(
            g, params, init.rho, init.s, increments[idx], cfg,
            v_path=v_path, sigma_path=sigma_path, s_offset=s_offset,
            record_energy=True, t0=init.t)))

    sup_h0 = np.full(m, np.nan)
    min_density = np.full(m, np.nan)
    max_mass = 0.0
    failures = []
    trajectories = [None] * m if keep_paths else None

    for idx, batch in results:
        for pos, path_i in enumerate(idx.tolist()):
            keep = int(min(batch.fail_step[pos], cfg.n_steps)) + 1
            code = int(batch.fail_code[pos])
            if code == _FAIL_NONE:
                sup_h0[path_i] = float(np.max(batch.h0[:, pos]))
                min_density[path_i] = float(np.min(batch.min_rho[:, pos]))
                max_mass = max(max_mass,
                               float(np.max(batch.mass_residual[:, pos])))
            else:
                failures.append({"path": path_i, "seed": seeds[path_i],
                                 "step": int(batch.fail_step[pos]),
                                 "reason": FAILURE_NAMES[code]})
            if keep_paths:
                noise = NoisePath(seed=seeds[path_i], dt=cfg.dt,
                                  n_steps=cfg.n_steps,
                                  increments=increments[path_i])
                trajectories[path_i] = Trajectory(
                    times=batch.times[:keep], rho=batch.rho[:keep, pos],
                    s=batch.s[:keep, pos], w=batch.w[:keep, pos],
                    mass_residual=batch.mass_residual[:keep, pos],
                    min_rho=batch.min_rho[:keep, pos],
                    h0=batch.h0[:keep, pos], noise=noise,
                    completed=code == _FAIL_NONE,
                    failure=FAILURE_NAMES.get(code))

    ok = ~np.isnan(sup_h0)
    moments = {
        "H0_sup_p1": float(np.mean(sup_h0[ok])) if ok.any() else None,
        "H0_sup_p2": float(np.mean(sup_h0[ok] ** 2)) if ok.any() else None,
    }
    quantiles = {}
    if ok.any():
        qv = np.quantile(min_density[ok], _QUANTILES)
        quantiles = {f"q{int(q * 100):02d}": float(v)
                     for q, v in zip(_QUANTILES, qv)}
    return EnsembleResult(seeds=seeds, n_paths=m, failures=failures,
                          sup_h0=sup_h0, min_density=min_density,
                          moments=moments, min_density_quantiles=quantiles,
                          max_mass_residual=max_mass,
                          trajectories=trajectories)


# ------------------------------------------------------------- model checks

def energy_drift(g: Graph, params: ModelParams, rho_path, s_path,
                 which: str = "h0", s_shift=None, s_offset=None) -> float:
    """Max relative drift of H_which along a path; optional per-time S shift."""
    s_eval = s_path if s_shift is None else s_path + s_shift[..., None]
    mix = params.h0_mix() if which == "h0" else params.h1_mix()
    vals = geo.energy(g, rho_path, s_eval, params, mix, s_offset=s_offset)
    ref = float(np.abs(vals[0])) if np.ndim(vals) == 1 else np.abs(vals[0])
    scale = np.maximum(ref, 1e-300)
    return float(np.max(np.abs(vals - vals[0]) / scale))


def shifted_hamiltonian_drift(traj: Trajectory, g: Graph,
                              params: ModelParams) -> float:
    """Relative drift of H0(rho, S + sigma_bar * W * 1); constant sigma only."""
    sigma_bar = params.sigma_bar()
    if sigma_bar is None:
        raise ValueError("constant-sigma invariance needs a constant sigma")
    return energy_drift(g, params, traj.rho, traj.s, "h0",
                        s_shift=sigma_bar * traj.w)


def transverse_check(init: MadelungState, g: Graph, params: ModelParams,
                     alpha: float, noise: NoisePath,
                     cfg: IntegratorConfig) -> float:
    """Max_t || u^{V+alpha}(t) - u(t) e^{-i alpha t} ||_2 on one noise path.

    The paper's own S-equation (dS = -(... + V) dt) makes the shifted
    solution u e^{-i alpha t}; a constant potential shift only advances the
    global phase.
    """
    base = integrate_path(init, g, params, noise, cfg, record_energy=False)
    shifted = integrate_path(
        init, g, params.with_updates(V=params.V + float(alpha)), noise, cfg,
        record_energy=False)
    if not (base.completed and shifted.completed):
        raise DensityFloorError("transverse check aborted: a path failed")
    u = base.complex_path()
    ua = shifted.complex_path()
    phase = np.exp(-1j * alpha * base.times)[:, None]
    dev = np.linalg.norm(ua - u * phase, axis=-1)
    return float(np.max(dev))


def reversibility_check(init: MadelungState, g: Graph, params: ModelParams,
                        noise: NoisePath, cfg: IntegratorConfig) -> float:
    """Forward, then conjugate and rerun the reversed increments; returns
    || u_hat(0) - u(0) ||_2.

    For the midpoint scheme, stepping the conjugated state (rho, -S) with
    the same (dt, dW_k) in reversed order inverts each forward step exactly,
    so the return error tracks the fixed-point tolerance.
    """
    if cfg.n_steps == 0:
        return 0.0
    fwd = integrate_path(init, g, params, noise, cfg, record_energy=False)
    if not fwd.completed:
        raise DensityFloorError("reversibility check aborted: path failed")
    clip = cfg.increment_clip * np.sqrt(cfg.dt)
    dw_eff = np.clip(noise.increments, -clip, clip)
    rev_inc = dw_eff[::-1].copy()
    back = integrate_batch(g, params, fwd.rho[-1], -fwd.s[-1],
                           rev_inc[None, :], cfg, record_energy=False)
    if back.fail_code[0] != _FAIL_NONE:
        raise DensityFloorError("reversibility check aborted: reverse path failed")
    u0 = madelung_to_complex(fwd.rho[0], fwd.s[0])
    u_back = madelung_to_complex(back.rho[-1, 0], -back.s[-1, 0])
    return float(np.linalg.norm(u_back - u0))
