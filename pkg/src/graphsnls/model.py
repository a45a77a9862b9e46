"""Model parameters, energy mixes, and Madelung states.

Two stochastic flows are covered by one parameterization. Writing
H = c_K K + c_I I + c_S Sigma + c_V Vpot + c_W Wpot + c_L L, the presets are

  snls1: H0 = K + I/8 + Vpot + Wpot - kappa L,  H1 = Sigma
  snls2: H0 = Vpot + Wpot - kappa L,            H1 = K + I/8

and "custom" keeps the full H0 with H1 mixed from the five eta
coefficients (eta1 K + eta2 I + eta3 Sigma + eta4 Wpot + eta5 L).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryDensityError, ConfigError

THETA_KINDS = ("averaged", "logarithmic", "harmonic")


@dataclass(frozen=True)
class EnergyMix:
    """Coefficients of (K, I, Sigma, Vpot, Wpot, L) in an energy."""

    kinetic: float = 0.0
    fisher: float = 0.0
    sigma: float = 0.0
    potential: float = 0.0
    interaction: float = 0.0
    entropy: float = 0.0


_SNLS1_ETA = (0.0, 0.0, 1.0, 0.0, 0.0)
_SNLS2_ETA = (1.0, 0.125, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ModelParams:
    """Potentials, diffusion, entropy weight and H1 mixing for one model."""

    n_nodes: int
    V: np.ndarray                 # (N,) linear potential
    W: np.ndarray                 # (N, N) symmetric interaction
    sigma: np.ndarray             # (N,) diffusion coefficients
    kappa: float = 0.0
    eta: tuple = _SNLS1_ETA
    theta_kind: str = "averaged"
    theta_tilde_kind: str = "logarithmic"
    preset: str = "snls1"

    def __post_init__(self):
        v = np.ascontiguousarray(np.broadcast_to(
            np.asarray(self.V, dtype=float), (self.n_nodes,)))
        s = np.ascontiguousarray(np.broadcast_to(
            np.asarray(self.sigma, dtype=float), (self.n_nodes,)))
        w = np.asarray(self.W, dtype=float)
        if w.ndim == 0:
            w = np.full((self.n_nodes, self.n_nodes), float(w))
        if w.shape != (self.n_nodes, self.n_nodes):
            raise ConfigError(f"W must be {self.n_nodes}x{self.n_nodes}, "
                              f"got {w.shape}")
        if not np.allclose(w, w.T, atol=0.0):
            raise ConfigError("interaction matrix W must be symmetric")
        if len(self.eta) != 5:
            raise ConfigError("eta must have exactly five components")
        if self.theta_kind not in THETA_KINDS:
            raise ConfigError(f"unknown theta kind {self.theta_kind!r}")
        if self.theta_tilde_kind not in THETA_KINDS:
            raise ConfigError(f"unknown theta_tilde kind {self.theta_tilde_kind!r}")
        if self.preset not in ("snls1", "snls2", "custom"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        for a in (v, s, w):
            a.flags.writeable = False
        object.__setattr__(self, "V", v)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))

    def h0_mix(self) -> EnergyMix:
        if self.preset == "snls2":
            return EnergyMix(potential=1.0, interaction=1.0, entropy=-self.kappa)
        return EnergyMix(kinetic=1.0, fisher=0.125, potential=1.0,
                         interaction=1.0, entropy=-self.kappa)

    def h1_mix(self) -> EnergyMix:
        e1, e2, e3, e4, e5 = self.eta
        return EnergyMix(kinetic=e1, fisher=e2, sigma=e3,
                         interaction=e4, entropy=e5)

    @property
    def has_interaction(self) -> bool:
        return bool(np.any(self.W != 0.0))

    def sigma_bar(self) -> float | None:
        """The common value of sigma if it is constant across nodes."""
        s0 = float(self.sigma[0])
        if np.all(self.sigma == s0):
            return s0
        return None

    def with_updates(self, **kw) -> "ModelParams":
        cur = dict(n_nodes=self.n_nodes, V=self.V, W=self.W,
                   sigma=self.sigma, kappa=self.kappa, eta=self.eta,
                   theta_kind=self.theta_kind,
                   theta_tilde_kind=self.theta_tilde_kind, preset=self.preset)
        cur.update(kw)
        return ModelParams(**cur)


def snls1_params(n_nodes, V=0.0, W=0.0, sigma=0.0, kappa=0.0,
                 theta_kind="averaged", theta_tilde_kind="logarithmic"):
    W = np.zeros((n_nodes, n_nodes)) if np.isscalar(W) and W == 0.0 else W
    return ModelParams(n_nodes=n_nodes, V=V, W=W, sigma=sigma, kappa=kappa,
                       eta=_SNLS1_ETA, theta_kind=theta_kind,
                       theta_tilde_kind=theta_tilde_kind, preset="snls1")


def snls2_params(n_nodes, V=0.0, W=0.0, sigma=0.0, kappa=0.0,
                 theta_kind="averaged", theta_tilde_kind="logarithmic"):
    W = np.zeros((n_nodes, n_nodes)) if np.isscalar(W) and W == 0.0 else W
    return ModelParams(n_nodes=n_nodes, V=V, W=W, sigma=sigma, kappa=kappa,
                       eta=_SNLS2_ETA, theta_kind=theta_kind,
                       theta_tilde_kind=theta_tilde_kind, preset="snls2")


def params_from_dict(n_nodes: int, doc: dict) -> ModelParams:
    """ModelParams from a structured document.

    Keys: preset in {snls1, snls2, custom}; V, sigma (array or scalar);
    W (dense matrix or [[i, j, w], ...] triplets); kappa; eta (5 floats,
    custom preset only); theta, theta_tilde.
    """
    known = {"preset", "V", "W", "sigma", "kappa", "eta", "theta",
             "theta_tilde"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown model key {key!r}")
    preset = doc.get("preset", "snls1")
    if preset not in ("snls1", "snls2", "custom"):
        raise ConfigError(f"model.preset must be snls1|snls2|custom, got {preset!r}")
    if "eta" in doc and preset != "custom":
        raise ConfigError("model.eta is only allowed with preset='custom'")

    w_doc = doc.get("W", 0.0)
    if isinstance(w_doc, (int, float)):
        W = np.full((n_nodes, n_nodes), float(w_doc))
    else:
        w_arr = np.asarray(w_doc, dtype=float)
        if w_arr.ndim == 2 and w_arr.shape == (n_nodes, n_nodes):
            W = w_arr
        elif w_arr.ndim == 2 and w_arr.shape[1] == 3:
            W = np.zeros((n_nodes, n_nodes))
            for (i, j, w) in w_arr:
                W[int(i), int(j)] = w
                W[int(j), int(i)] = w
        else:
            raise ConfigError("model.W must be a scalar, an NxN matrix, or "
                              "[[i, j, w], ...] triplets")

    if preset == "custom":
        eta = tuple(float(e) for e in doc.get("eta", _SNLS1_ETA))
    else:
        eta = _SNLS1_ETA if preset == "snls1" else _SNLS2_ETA

    return ModelParams(
        n_nodes=n_nodes,
        V=doc.get("V", 0.0),
        W=W,
        sigma=doc.get("sigma", 0.0),
        kappa=float(doc.get("kappa", 0.0)),
        eta=eta,
        theta_kind=doc.get("theta", "averaged"),
        theta_tilde_kind=doc.get("theta_tilde", "logarithmic"),
        preset=preset,
    )


MASS_ATOL = 1e-12


@dataclass(frozen=True)
class MadelungState:
    """Density/phase pair (rho, S) at time t."""

    rho: np.ndarray
    s: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).copy()
        s = np.asarray(self.s, dtype=float).copy()
        if rho.shape != s.shape:
            raise ValueError(f"rho and s shapes differ: {rho.shape} vs {s.shape}")
        rho.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "s", s)

    @property
    def n_nodes(self) -> int:
        return self.rho.shape[-1]


def validate_density(rho: np.ndarray, require_interior: bool = True,
                     atol: float = MASS_ATOL) -> None:
    total = float(np.sum(rho))
    if abs(total - 1.0) > atol * max(1, rho.shape[-1]):
        raise BoundaryDensityError(
            f"density mass is {total!r}, not 1 within {atol}")
    if require_interior and float(np.min(rho)) <= 0.0:
        raise BoundaryDensityError("density has a nonpositive component")


def uniform_state(n_nodes: int, s: float | np.ndarray = 0.0) -> MadelungState:
    return MadelungState(rho=np.full(n_nodes, 1.0 / n_nodes),
                         s=np.broadcast_to(np.asarray(s, float), (n_nodes,)))
