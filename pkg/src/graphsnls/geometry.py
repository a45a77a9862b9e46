"""Static functionals and canonical fields on the density manifold.

Conventions, fixed once and used everywhere:

  kinetic energy   K(rho, S) = 1/4 sum_i sum_{j~i} w_ij (S_i - S_j)^2 Theta(rho_i, rho_j)
  Fisher info      I(rho)    = 1/2 sum_i sum_{j~i} wt_ij (log rho_i - log rho_j)^2 ThetaT(rho_i, rho_j)
  entropy          L(rho)    = sum_i (rho_i log rho_i - rho_i)
  canonical flow   drho/dt = +dH/dS,   dS/dt = -dH/drho

The 1/4 normalization of K is the unique choice whose canonical equations
reproduce the continuity equation drho_i = sum_j w_ij (S_i - S_j) theta_ij
together with the kinetic phase drift (1/2) sum_j w_ij (S_i-S_j)^2 dTheta/drho_i.

All node functions broadcast over leading batch axes; the node axis is last.
Scalar-valued functions return arrays of the batch shape.
"""

import numpy as np

from .errors import BoundaryDensityError, OutOfDomainError
from .graphs import Graph
from .model import EnergyMix, ModelParams

# Relative width |x-y| <= cutoff*(x+y) below which the logarithmic-mean
# formulas switch to their symmetric series (removes the 0/0).
_LOG_MEAN_CUTOFF = 1e-6


def _require_positive_pair(x, y):
    if np.min(x) <= 0.0 or np.min(y) <= 0.0:
        raise OutOfDomainError("theta weights need strictly positive arguments")


def require_interior(rho: np.ndarray) -> None:
    if float(np.min(rho)) <= 0.0:
        raise BoundaryDensityError("state is not in the interior of P(G)")


def theta(x, y, kind: str = "averaged"):
    """Density-dependent edge weight Theta(x, y); elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _require_positive_pair(x, y)
    if kind == "averaged":
        return 0.5 * (x + y)
    if kind == "harmonic":
        return 2.0 * x * y / (x + y)
    if kind == "logarithmic":
        d = x - y
        small = np.abs(d) <= _LOG_MEAN_CUTOFF * (x + y)
        with np.errstate(divide="ignore", invalid="ignore"):
            closed = d / (np.log(x) - np.log(y))
        r = d / (x + y)
        series = 0.5 * (x + y) * (1.0 - r * r / 3.0 - 4.0 * r ** 4 / 45.0)
        return np.where(small, series, closed)
    raise OutOfDomainError(f"unknown theta kind {kind!r}")


def dtheta(x, y, kind: str = "averaged"):
    """Analytic partials (dTheta/dx, dTheta/dy); elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _require_positive_pair(x, y)
    if kind == "averaged":
        half = np.broadcast_to(0.5, np.broadcast_shapes(x.shape, y.shape))
        return half.copy(), half.copy()
    if kind == "harmonic":
        s2 = (x + y) ** 2
        return 2.0 * y * y / s2, 2.0 * x * x / s2
    if kind == "logarithmic":
        d = x - y
        small = np.abs(d) <= _LOG_MEAN_CUTOFF * (x + y)
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.log(x) - np.log(y)
            dx_closed = (L - d / x) / (L * L)
            dy_closed = (d / y - L) / (L * L)
        # symmetric series in tau = (x-y)/(x+y); odd terms flip under swap
        tau = d / (x + y)
        dx_series = 0.5 * (1.0 - (2.0 / 3.0) * tau + tau * tau / 3.0
                           - (16.0 / 45.0) * tau ** 3)
        dy_series = 0.5 * (1.0 + (2.0 / 3.0) * tau + tau * tau / 3.0
                           + (16.0 / 45.0) * tau ** 3)
        return (np.where(small, dx_series, dx_closed),
                np.where(small, dy_series, dy_closed))
    raise OutOfDomainError(f"unknown theta kind {kind!r}")


def edge_theta(g: Graph, rho: np.ndarray, kind: str) -> np.ndarray:
    ri, rj = g.edge_pair(rho)
    return theta(ri, rj, kind)


def phase_diff(g: Graph, s: np.ndarray, s_offset=None) -> np.ndarray:
    """Per-edge phase difference S_i - S_j, plus the fixed winding offset.

    The offset is a constant array of 2*pi multiples selecting the winding
    sector on cyclic graphs (zero for ordinary potentials); the dynamics
    never leaves a sector, so it is data alongside the state, not a field.
    """
    ds = g.edge_diff(s)
    if s_offset is not None:
        ds = ds + s_offset
    return ds


def grad_potential(g: Graph, s: np.ndarray, s_offset=None) -> np.ndarray:
    """Discrete gradient sqrt(w_ij) (S_i - S_j) on canonical edges (i < j).

    The value on the reversed pair (j, i) is the negative.
    """
    return np.sqrt(g.omega) * phase_diff(g, s, s_offset)


def divergence_theta(g: Graph, rho: np.ndarray, s: np.ndarray,
                     kind: str = "averaged", s_offset=None) -> np.ndarray:
    """Node vector sum_{j~i} theta_ij w_ij (S_j - S_i); sums to zero."""
    require_interior(rho)
    return -kinetic_grad_s(g, rho, s, kind, s_offset)


def kinetic_energy(g: Graph, rho: np.ndarray, s: np.ndarray,
                   kind: str = "averaged", s_offset=None) -> np.ndarray:
    require_interior(rho)
    ds = phase_diff(g, s, s_offset)
    th = edge_theta(g, rho, kind)
    return 0.5 * np.sum(g.omega * ds * ds * th, axis=-1)


def kinetic_grad_s(g: Graph, rho: np.ndarray, s: np.ndarray,
                   kind: str = "averaged", s_offset=None) -> np.ndarray:
    """dK/dS_i = sum_{j~i} w_ij (S_i - S_j) theta_ij; the mass flux."""
    ds = phase_diff(g, s, s_offset)
    th = edge_theta(g, rho, kind)
    return g.node_accumulate_antisym(g.omega * ds * th)


def kinetic_grad_rho(g: Graph, rho: np.ndarray, s: np.ndarray,
                     kind: str = "averaged", s_offset=None) -> np.ndarray:
    """dK/drho_k = 1/2 sum_{j~k} w_kj (S_k - S_j)^2 dTheta/drho_k."""
    ds2 = phase_diff(g, s, s_offset) ** 2
    ri, rj = g.edge_pair(rho)
    di, dj = dtheta(ri, rj, kind)
    half = 0.5 * g.omega * ds2
    return g.node_accumulate(half * di, half * dj)


def fisher_information(g: Graph, rho: np.ndarray,
                       tilde_kind: str = "logarithmic") -> np.ndarray:
    """Discrete Fisher information.

    With the logarithmic weight the product form
    sum_edges wt (log rho_i - log rho_j)(rho_i - rho_j) is used; the
    weight cancels algebraically, which conditions the sum near uniform rho.
    """
    require_interior(rho)
    dlog = g.edge_diff(np.log(rho))
    if tilde_kind == "logarithmic":
        drho = g.edge_diff(rho)
        return np.sum(g.omega_tilde * dlog * drho, axis=-1)
    ri, rj = g.edge_pair(rho)
    th = theta(ri, rj, tilde_kind)
    return np.sum(g.omega_tilde * dlog * dlog * th, axis=-1)


def fisher_gradient(g: Graph, rho: np.ndarray,
                    tilde_kind: str = "logarithmic") -> np.ndarray:
    """dI/drho; analytic for the logarithmic weight, via dtheta otherwise."""
    require_interior(rho)
    ri, rj = g.edge_pair(rho)
    dlog = np.log(ri) - np.log(rj)
    if tilde_kind == "logarithmic":
        drho = ri - rj
        vi = g.omega_tilde * (drho / ri + dlog)
        vj = g.omega_tilde * (-drho / rj - dlog)
        return g.node_accumulate(vi, vj)
    th = theta(ri, rj, tilde_kind)
    di, dj = dtheta(ri, rj, tilde_kind)
    dlog2 = dlog * dlog
    vi = g.omega_tilde * (2.0 * dlog / ri * th + dlog2 * di)
    vj = g.omega_tilde * (-2.0 * dlog / rj * th + dlog2 * dj)
    return g.node_accumulate(vi, vj)


def interaction_apply(W: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """(W rho)_i with a fixed per-column reduction order."""
    out = np.empty_like(rho)
    for j in range(W.shape[0]):
        out[..., j] = np.sum(rho * W[j, :], axis=-1)
    return out


def linear_energy(rho: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.sum(rho * V, axis=-1)


def interaction_energy(rho: np.ndarray, W: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(rho * interaction_apply(W, rho), axis=-1)


def entropy(rho: np.ndarray) -> np.ndarray:
    require_interior(rho)
    return np.sum(rho * np.log(rho) - rho, axis=-1)


def sigma_energy(rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.sum(rho * sigma, axis=-1)


def scalar_potentials(rho: np.ndarray, params: ModelParams,
                      with_grads: bool = False):
    """(Vpot, Wpot, L, Sigma) and optionally their rho-gradients."""
    vals = (linear_energy(rho, params.V),
            interaction_energy(rho, params.W),
            entropy(rho),
            sigma_energy(rho, params.sigma))
    if not with_grads:
        return vals
    grads = (np.broadcast_to(params.V, rho.shape).copy(),
             interaction_apply(params.W, rho),
             np.log(rho),
             np.broadcast_to(params.sigma, rho.shape).copy())
    return vals, grads


def _resolve(params: ModelParams, v_now, sigma_now):
    v = params.V if v_now is None else np.asarray(v_now, dtype=float)
    s = params.sigma if sigma_now is None else np.asarray(sigma_now, dtype=float)
    return v, s


def energy(g: Graph, rho: np.ndarray, s: np.ndarray, params: ModelParams,
           mix: EnergyMix, v_now=None, sigma_now=None, s_offset=None) -> np.ndarray:
    """Scalar energy for an arbitrary coefficient mix."""
    v, sig = _resolve(params, v_now, sigma_now)
    out = 0.0
    if mix.kinetic:
        out = out + mix.kinetic * kinetic_energy(g, rho, s, params.theta_kind,
                                                 s_offset)
    if mix.fisher:
        out = out + mix.fisher * fisher_information(g, rho, params.theta_tilde_kind)
    if mix.sigma:
        out = out + mix.sigma * np.sum(rho * sig, axis=-1)
    if mix.potential:
        out = out + mix.potential * np.sum(rho * v, axis=-1)
    if mix.interaction:
        out = out + mix.interaction * interaction_energy(rho, params.W)
    if mix.entropy:
        out = out + mix.entropy * entropy(rho)
    return out + np.zeros(np.asarray(rho).shape[:-1])


def hamiltonians(g: Graph, rho: np.ndarray, s: np.ndarray,
                 params: ModelParams, v_now=None, sigma_now=None,
                 s_offset=None):
    """(H0, H1) for the configured preset."""
    require_interior(rho)
    h0 = energy(g, rho, s, params, params.h0_mix(), v_now, sigma_now, s_offset)
    h1 = energy(g, rho, s, params, params.h1_mix(), v_now, sigma_now, s_offset)
    return h0, h1


def hamiltonian_field(g: Graph, rho: np.ndarray, s: np.ndarray,
                      params: ModelParams, which: str = "h0",
                      v_now=None, sigma_now=None, s_offset=None):
    """Canonical vector field (drho/dt, dS/dt) = (dH/dS, -dH/drho).

    The rho component is a sum of antisymmetric edge fluxes, so it sums
    to zero at roundoff over the node axis.
    """
    require_interior(rho)
    mix = params.h0_mix() if which == "h0" else params.h1_mix()
    return mix_field(g, rho, s, params, mix, v_now, sigma_now, s_offset)


def mix_field(g: Graph, rho: np.ndarray, s: np.ndarray, params: ModelParams,
              mix: EnergyMix, v_now=None, sigma_now=None, s_offset=None):
    """Canonical field for an arbitrary energy mix (no interior check)."""
    v, sig = _resolve(params, v_now, sigma_now)
    batch = np.broadcast_shapes(rho.shape, s.shape)
    if mix.kinetic:
        drho = mix.kinetic * kinetic_grad_s(g, rho, s, params.theta_kind,
                                            s_offset)
    else:
        drho = np.zeros(batch)
    dh_drho = np.zeros(batch)
    if mix.kinetic:
        dh_drho += mix.kinetic * kinetic_grad_rho(g, rho, s, params.theta_kind,
                                                  s_offset)
    if mix.fisher:
        dh_drho += mix.fisher * fisher_gradient(g, rho, params.theta_tilde_kind)
    if mix.sigma:
        dh_drho += mix.sigma * sig
    if mix.potential:
        dh_drho += mix.potential * v
    if mix.interaction:
        dh_drho += mix.interaction * interaction_apply(params.W, rho)
    if mix.entropy:
        dh_drho += mix.entropy * np.log(rho)
    return drho, -dh_drho


def field_jacobian(g: Graph, rho: np.ndarray, s: np.ndarray,
                   params: ModelParams, which: str = "h0", v_now=None,
                   sigma_now=None, s_offset=None,
                   h_scale: float = 1e-6) -> np.ndarray:
    """Real 2N x 2N Jacobian of the canonical field by central differences.

    Coordinates are stacked as (rho_0..rho_{N-1}, S_0..S_{N-1}); rows index
    the output (drho, dS), columns the perturbed input. Batched over leading
    axes. Step is h_scale * (1 + sup-norm of the state), per batch element.
    """
    rho = np.asarray(rho, dtype=float)
    s = np.asarray(s, dtype=float)
    n = rho.shape[-1]
    batch = rho.shape[:-1]
    scale = np.maximum(np.max(np.abs(rho), axis=-1), np.max(np.abs(s), axis=-1))
    h = h_scale * (1.0 + scale)[..., None]

    jac = np.empty(batch + (2 * n, 2 * n))

    def eval_field(r, sv):
        dr, dsv = mix_field(g, r, sv, params,
                            params.h0_mix() if which == "h0" else params.h1_mix(),
                            v_now, sigma_now, s_offset)
        return dr, dsv

    for k in range(2 * n):
        pert = np.zeros(batch + (n,))
        if k < n:
            pert[..., k] = 1.0
            rp, sp = rho + h * pert, s
            rm, sm = rho - h * pert, s
        else:
            pert[..., k - n] = 1.0
            rp, sp = rho, s + h * pert
            rm, sm = rho, s - h * pert
        fpr, fps = eval_field(rp, sp)
        fmr, fms = eval_field(rm, sm)
        inv = 1.0 / (2.0 * h[..., 0])
        jac[..., :n, k] = (fpr - fmr) * inv[..., None]
        jac[..., n:, k] = (fps - fms) * inv[..., None]
    return jac
