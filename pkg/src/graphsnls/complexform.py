"""Complex wave-function form: Madelung transform and nonlinear Laplacian.

The nonlinear graph Laplacian is the unique operator for which

    i du/dt = -1/2 (Lap_G u) + u V + u (W |u|^2) - kappa u log|u|^2

is equivalent, through u = sqrt(rho) e^{iS}, to the canonical flow of
H0 = K + I/8 + Vpot + Wpot - kappa L. Written out per node j:

    (Lap_G u)_j = -u_j [ i/rho_j * sum_l w_jl (S_j - S_l) theta_jl
                         + 1/rho_j * sum_l wt_jl thetat_jl (log rho_j - log rho_l)/2
                         + sum_l w_jl dtheta_jl/drho_j (S_j - S_l)^2
                         + sum_l wt_jl dthetat_jl/drho_j (log rho_j - log rho_l)^2 / 4 ]

using Re log u = (log rho)/2 and Im log u = S with branch tracking.
Phase differences are taken from the tracked S, never from principal-value
angles of u alone.
"""

import numpy as np

from .errors import ZeroAmplitudeError
from .geometry import dtheta, interaction_apply, mix_field, theta
from .graphs import Graph
from .model import EnergyMix, ModelParams

_AMP_FLOOR = 1e-14


def madelung_to_complex(rho: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.sqrt(rho) * np.exp(1j * s)


def complex_to_madelung(u: np.ndarray, branch_hint: np.ndarray | None = None):
    """(rho, S) from u; S on the branch nearest branch_hint (principal if None)."""
    u = np.asarray(u, dtype=complex)
    if np.min(np.abs(u)) < _AMP_FLOOR:
        raise ZeroAmplitudeError("wave function has a (near-)zero amplitude node")
    rho = np.abs(u) ** 2
    s = np.angle(u)
    if branch_hint is not None:
        delta = s - np.asarray(branch_hint, dtype=float)
        s = branch_hint + (delta + np.pi) % (2.0 * np.pi) - np.pi
    return rho, s


def nonlinear_laplacian(g: Graph, u: np.ndarray, params: ModelParams,
                        branch_hint: np.ndarray | None = None,
                        s_offset=None) -> np.ndarray:
    """(Lap_G u)_j for the configured (theta, theta_tilde) pair."""
    from .geometry import phase_diff

    rho, s = complex_to_madelung(u, branch_hint)
    ds = phase_diff(g, s, s_offset)
    dlog = g.edge_diff(np.log(rho))
    ri, rj = g.edge_pair(rho)

    th = theta(ri, rj, params.theta_kind)
    di, dj = dtheta(ri, rj, params.theta_kind)
    tht = theta(ri, rj, params.theta_tilde_kind)
    dti, dtj = dtheta(ri, rj, params.theta_tilde_kind)

    w, wt = g.omega, g.omega_tilde
    flux = g.node_accumulate_antisym(w * ds * th)                 # sum w dS theta
    rlog = g.node_accumulate_antisym(0.5 * wt * dlog * tht)       # sum wt thetat dRe(log u)
    kin_i = w * ds * ds
    kin = g.node_accumulate(kin_i * di, kin_i * dj)               # sum w dtheta dS^2
    fis_i = 0.25 * wt * dlog * dlog
    fis = g.node_accumulate(fis_i * dti, fis_i * dtj)             # sum wt dthetat dRe(log u)^2

    return -u * (1j * flux / rho + rlog / rho + kin + fis)


def complex_equation_residual(g: Graph, u: np.ndarray, params: ModelParams,
                              branch_hint: np.ndarray | None = None,
                              s_offset=None) -> float:
    """Consistency check of the complex equation against the canonical flow.

    Returns the sup-norm of
      [-1/2 Lap_G u + uV + u(W|u|^2) - kappa u log|u|^2] - i du/dt
    with du/dt mapped from the Madelung H0 field by the chain rule
    du = u (drho/(2 rho) + i dS). Zero in exact arithmetic.
    """
    rho, s = complex_to_madelung(u, branch_hint)
    lap = nonlinear_laplacian(g, u, params, branch_hint=s, s_offset=s_offset)
    rhs = (-0.5 * lap + u * params.V
           + u * interaction_apply(params.W, rho)
           - params.kappa * u * np.log(rho))
    drho, dsv = mix_field(g, rho, s, params, params.h0_mix(), s_offset=s_offset)
    du = u * (drho / (2.0 * rho) + 1j * dsv)
    return float(np.max(np.abs(rhs - 1j * du)))


def complex_drift(g: Graph, u: np.ndarray, params: ModelParams,
                  v_now=None, branch_hint: np.ndarray | None = None,
                  s_offset=None) -> np.ndarray:
    """Deterministic drift du/dt of the random-perturbation flow.

    Computed through Madelung coordinates (branch-tracked), so it is exactly
    the chain-rule image of the H0 canonical field.
    """
    rho, s = complex_to_madelung(u, branch_hint)
    drho, dsv = mix_field(g, rho, s, params, params.h0_mix(), v_now=v_now,
                          s_offset=s_offset)
    return u * (drho / (2.0 * rho) + 1j * dsv)


def split_complex(z: np.ndarray) -> np.ndarray:
    """Stack (Re z, Im z) along the last axis: (..., N) -> (..., 2N)."""
    return np.concatenate([z.real, z.imag], axis=-1)


def madelung_chain_matrix(rho: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Real (..., 2N, 2N) Jacobian of (rho, S) -> (Re u, Im u).

    Columns are ordered (drho_0..drho_{N-1}, dS_0..dS_{N-1}); the complex
    perturbation is du = u (drho / (2 rho) + i dS).
    """
    u = madelung_to_complex(rho, s)
    n = rho.shape[-1]
    batch = rho.shape[:-1]
    c = np.zeros(batch + (2 * n, 2 * n))
    a = u / (2.0 * rho)
    b = 1j * u
    for i in range(n):
        c[..., i, i] = a[..., i].real
        c[..., n + i, i] = a[..., i].imag
        c[..., i, n + i] = b[..., i].real
        c[..., n + i, n + i] = b[..., i].imag
    return c


def join_complex(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def complex_drift_jacobian(g: Graph, u: np.ndarray, params: ModelParams,
                           v_now=None, branch_hint: np.ndarray | None = None,
                           s_offset=None, h_scale: float = 1e-6) -> np.ndarray:
    """Real 2N x 2N linearization of u -> complex_drift(u).

    The nonlinear Laplacian is not holomorphic, so the derivative is taken
    in (Re u, Im u) coordinates by central differences with step
    h_scale * (1 + sup-norm of u). Batched over leading axes.
    """
    u = np.asarray(u, dtype=complex)
    n = u.shape[-1]
    batch = u.shape[:-1]
    if branch_hint is None:
        _, branch_hint = complex_to_madelung(u)
    h = h_scale * (1.0 + np.max(np.abs(u), axis=-1))[..., None]

    jac = np.empty(batch + (2 * n, 2 * n))
    for k in range(2 * n):
        pert = np.zeros((n,), dtype=complex)
        if k < n:
            pert[k] = 1.0
        else:
            pert[k - n] = 1j
        fp = complex_drift(g, u + h * pert, params, v_now, branch_hint, s_offset)
        fm = complex_drift(g, u - h * pert, params, v_now, branch_hint, s_offset)
        col = (fp - fm) / (2.0 * h)
        jac[..., :n, k] = col.real
        jac[..., n:, k] = col.imag
    return jac
