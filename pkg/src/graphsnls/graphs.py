"""Finite weighted graphs and periodic ring lattices.

Edges are stored once per unordered pair with i < j, sorted
lexicographically. Every node-sum over neighbor pairs iterates edges in
that fixed order (explicit loop over the edge axis), so accumulated values
are bit-identical regardless of batch shape or how an ensemble is chunked
across workers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DisconnectedGraphError,
    DuplicateEdgeError,
    NonpositiveWeightError,
    NotALatticeError,
    SelfLoopError,
    TooFewNodesError,
)


@dataclass(frozen=True)
class LatticeSpec:
    """1-D periodic ring with spacing dx.

    The edge weight is (dTheta/drho * n_neighbors * dx^2)^-1; with the
    averaged weight (dTheta/drho = 1/2) and two neighbors this is 1/dx^2.
    """

    n_nodes: int
    dx: float
    periodic: bool = True
    dim: int = 1


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, connected weighted graph. Immutable after construction."""

    n_nodes: int
    edges: np.ndarray        # (E, 2) int64, i < j, lexicographic order
    omega: np.ndarray        # (E,) positive symmetric weights
    omega_tilde: np.ndarray  # (E,) weights for the Fisher-information pair
    neighbors: tuple         # tuple of sorted neighbor tuples per node
    coords: np.ndarray | None = None  # (N,) node positions, lattices only
    lattice: LatticeSpec | None = None
    # Signed periodic displacement x_i - x_j per canonical edge. On a ring
    # the wrap edge gets the minimal displacement (+dx), not -(N-1) dx.
    edge_disp: np.ndarray | None = None

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def ei(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def ej(self) -> np.ndarray:
        return self.edges[:, 1]

    def edge_diff(self, x: np.ndarray) -> np.ndarray:
        """Per-edge difference x_i - x_j; x has node axis last."""
        return x[..., self.ei] - x[..., self.ej]

    def edge_pair(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-edge endpoint values (x_i, x_j)."""
        return x[..., self.ei], x[..., self.ej]

    def node_accumulate(self, val_i: np.ndarray, val_j: np.ndarray) -> np.ndarray:
        """Sum edge values onto nodes: val_i to node i, val_j to node j.

        Accumulation order is the fixed edge order, independent of any
        leading batch axes.
        """
        shape = val_i.shape[:-1] + (self.n_nodes,)
        out = np.zeros(shape, dtype=np.result_type(val_i, val_j, float))
        for e in range(self.n_edges):
            i = int(self.edges[e, 0])
            j = int(self.edges[e, 1])
            out[..., i] += val_i[..., e]
            out[..., j] += val_j[..., e]
        return out

    def node_accumulate_antisym(self, val: np.ndarray) -> np.ndarray:
        """Accumulate +val to node i and -val to node j per edge."""
        return self.node_accumulate(val, -val)

    def degree(self, node: int) -> int:
        return len(self.neighbors[node])


def _connected(n_nodes: int, neighbors: tuple) -> bool:
    seen = [False] * n_nodes
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        v = stack.pop()
        for w in neighbors[v]:
            if not seen[w]:
                seen[w] = True
                count += 1
                stack.append(w)
    return count == n_nodes


def build_graph(n_nodes, edge_list, omega_tilde_overrides=None,
                coords=None, lattice=None, edge_disp=None) -> Graph:
    """Construct a validated Graph from (i, j, omega) triples.

    omega_tilde defaults to omega; overrides are given as (i, j, value)
    triples for existing edges.
    """
    if n_nodes < 1:
        raise TooFewNodesError("graph needs at least one node")
    seen = {}
    for (i, j, w) in edge_list:
        i = int(i)
        j = int(j)
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise DuplicateEdgeError(
                f"edge ({i},{j}) has an endpoint outside 0..{n_nodes - 1}")
        if i == j:
            raise SelfLoopError(f"self loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdgeError(f"edge {key} listed more than once")
        w = float(w)
        if not (w > 0.0) or not np.isfinite(w):
            raise NonpositiveWeightError(f"edge {key} has weight {w}")
        seen[key] = w

    keys = sorted(seen)
    edges = np.array(keys, dtype=np.int64).reshape(len(keys), 2)
    omega = np.array([seen[k] for k in keys], dtype=float)

    omega_tilde = omega.copy()
    if omega_tilde_overrides is not None:
        for (i, j, w) in omega_tilde_overrides:
            key = (min(int(i), int(j)), max(int(i), int(j)))
            if key not in seen:
                raise DuplicateEdgeError(
                    f"omega_tilde override for non-edge {key}")
            w = float(w)
            if not (w > 0.0) or not np.isfinite(w):
                raise NonpositiveWeightError(
                    f"omega_tilde for edge {key} is {w}")
            omega_tilde[keys.index(key)] = w

    nbrs = [[] for _ in range(n_nodes)]
    for (i, j) in keys:
        nbrs[i].append(j)
        nbrs[j].append(i)
    neighbors = tuple(tuple(sorted(v)) for v in nbrs)

    if not _connected(n_nodes, neighbors):
        raise DisconnectedGraphError("graph is not connected")

    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        coords.flags.writeable = False
    if edge_disp is not None:
        disp = np.zeros(len(keys))
        for (i, j), d in edge_disp.items():
            disp[keys.index((min(i, j), max(i, j)))] = d if i < j else -d
        disp.flags.writeable = False
        edge_disp = disp
    edges.flags.writeable = False
    omega.flags.writeable = False
    omega_tilde.flags.writeable = False
    return Graph(n_nodes=n_nodes, edges=edges, omega=omega,
                 omega_tilde=omega_tilde, neighbors=neighbors,
                 coords=coords, lattice=lattice, edge_disp=edge_disp)


def build_ring_lattice(spec: LatticeSpec) -> Graph:
    """Periodic 1-D ring with coords x_j = j*dx and uniform omega = 1/dx^2."""
    if not spec.periodic:
        raise NotALatticeError("only periodic ring lattices are supported")
    if spec.dim != 1:
        raise NotALatticeError("only 1-D lattices are supported")
    n = int(spec.n_nodes)
    if n < 3:
        raise TooFewNodesError(f"periodic ring needs N >= 3, got {n}")
    dx = float(spec.dx)
    if not (dx > 0.0):
        raise NonpositiveWeightError(f"lattice spacing must be positive, got {dx}")
    w = 1.0 / dx ** 2
    edge_list = [(j, (j + 1) % n, w) for j in range(n)]
    coords = np.arange(n, dtype=float) * dx
    # periodic displacements: consecutive edge (j, j+1) has x_j - x_{j+1} = -dx;
    # the wrap edge (0, n-1) has minimal displacement +dx.
    disp = {(j, j + 1): -dx for j in range(n - 1)}
    disp[(0, n - 1)] = dx
    return build_graph(n, edge_list, coords=coords, lattice=spec,
                       edge_disp=disp)


def require_ring(g: Graph) -> LatticeSpec:
    if g.lattice is None or g.coords is None:
        raise NotALatticeError("operation requires a ring lattice graph")
    return g.lattice


def graph_from_dict(doc: dict) -> Graph:
    """Build a graph from a structured document.

    Keys: either {"lattice": {"n": N, "dx": dx, "periodic": true}} or
    {"n_nodes": N, "edges": [[i, j, omega], ...],
     "omega_tilde": [[i, j, w], ...] (optional)}.
    """
    from .errors import ConfigError

    if "lattice" in doc:
        if "edges" in doc:
            raise ConfigError("graph document has both 'lattice' and 'edges'")
        lat = doc["lattice"]
        try:
            spec = LatticeSpec(n_nodes=int(lat["n"]), dx=float(lat["dx"]),
                               periodic=bool(lat.get("periodic", True)))
        except KeyError as k:
            raise ConfigError(f"graph.lattice is missing key {k}") from None
        return build_ring_lattice(spec)
    try:
        n_nodes = int(doc["n_nodes"])
        edges = doc["edges"]
    except KeyError as k:
        raise ConfigError(f"graph document is missing key {k}") from None
    return build_graph(n_nodes, edges,
                       omega_tilde_overrides=doc.get("omega_tilde"))


def complete_graph(n_nodes: int, omega: float = 1.0) -> Graph:
    """K_n with uniform weights; K_2 is the smallest valid graph."""
    edge_list = [(i, j, omega) for i in range(n_nodes)
                 for j in range(i + 1, n_nodes)]
    return build_graph(n_nodes, edge_list)
