import json

import numpy as np
import pytest

from graphsnls.errors import (ConfigError, DisconnectedGraphError,
                              DuplicateEdgeError, NonpositiveWeightError,
                              NotALatticeError, SelfLoopError,
                              TooFewNodesError)
from graphsnls.graphs import (LatticeSpec, build_graph, build_ring_lattice,
                              complete_graph, graph_from_dict, require_ring)


def test_k2_smallest_valid_graph():
    g = build_graph(2, [(0, 1, 1.0)])
    assert g.n_nodes == 2
    assert g.n_edges == 1
    assert g.omega[0] == 1.0
    assert g.neighbors == ((1,), (0,))


def test_triangle_all_invariants():
    g = build_graph(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)])
    assert g.n_edges == 3
    # canonical lexicographic edge order
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 2]]
    assert g.omega.tolist() == [1.0, 0.5, 2.0]
    # omega_tilde defaults to omega, bit-identical
    assert g.omega_tilde.tolist() == g.omega.tolist()


def test_disconnected_rejected():
    with pytest.raises(DisconnectedGraphError):
        build_graph(3, [(0, 1, 1.0)])


def test_self_loop_rejected():
    with pytest.raises(SelfLoopError):
        build_graph(2, [(0, 0, 1.0)])


def test_duplicate_edge_rejected():
    with pytest.raises(DuplicateEdgeError):
        build_graph(2, [(0, 1, 1.0), (1, 0, 2.0)])


def test_nonpositive_weight_rejected():
    with pytest.raises(NonpositiveWeightError):
        build_graph(2, [(0, 1, 0.0)])
    with pytest.raises(NonpositiveWeightError):
        build_graph(2, [(0, 1, -1.0)])


def test_omega_tilde_override():
    g = build_graph(2, [(0, 1, 1.0)], omega_tilde_overrides=[(0, 1, 3.0)])
    assert g.omega[0] == 1.0
    assert g.omega_tilde[0] == 3.0
    with pytest.raises(DuplicateEdgeError):
        build_graph(3, [(0, 1, 1.0), (1, 2, 1.0)],
                    omega_tilde_overrides=[(0, 2, 1.0)])


def test_ring_weight_formula():
    # (1/2 * 2 * dx^2)^-1 = 1/dx^2
    g = build_ring_lattice(LatticeSpec(4, 1.0))
    assert np.all(g.omega == 1.0)
    g = build_ring_lattice(LatticeSpec(8, 0.5))
    assert np.all(g.omega == 4.0)


def test_ring_structure():
    g = build_ring_lattice(LatticeSpec(8, 0.5))
    assert all(g.degree(i) == 2 for i in range(8))
    assert np.allclose(g.coords, 0.5 * np.arange(8))
    # walking the cycle one way, periodic displacements sum to N * dx
    assert np.all(np.abs(g.edge_disp) == 0.5)
    total = 0.0
    for a in range(8):
        b = (a + 1) % 8
        e = g.edges.tolist().index([min(a, b), max(a, b)])
        d = g.edge_disp[e] if (min(a, b), max(a, b)) == (b, a) or a > b else -g.edge_disp[e]
        total += d
    assert total == pytest.approx(8 * 0.5, abs=1e-14)
    require_ring(g)


def test_ring_too_few_nodes():
    with pytest.raises(TooFewNodesError):
        build_ring_lattice(LatticeSpec(2, 1.0))


def test_ring_requires_periodic():
    with pytest.raises(NotALatticeError):
        build_ring_lattice(LatticeSpec(8, 0.5, periodic=False))


def test_require_ring_rejects_plain_graph():
    with pytest.raises(NotALatticeError):
        require_ring(complete_graph(3))


def test_symmetry_and_connectivity_random_graphs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        # random spanning tree plus extra edges keeps it connected
        edges = {}
        for v in range(1, n):
            u = int(rng.integers(0, v))
            edges[(u, v)] = float(rng.uniform(0.1, 2.0))
        for _ in range(n):
            a, b = rng.integers(0, n, size=2)
            if a != b:
                key = (min(a, b), max(a, b))
                edges.setdefault(key, float(rng.uniform(0.1, 2.0)))
        g = build_graph(n, [(i, j, w) for (i, j), w in edges.items()])
        # adjacency is symmetric
        for i in range(n):
            for j in g.neighbors[i]:
                assert i in g.neighbors[j]
        # BFS from node 0 reaches everything (construction guarantees it)
        assert g.n_nodes == n


def test_node_accumulate_matches_bruteforce(triangle):
    g = triangle
    rng = np.random.default_rng(3)
    val_i = rng.normal(size=(5, g.n_edges))
    val_j = rng.normal(size=(5, g.n_edges))
    out = g.node_accumulate(val_i, val_j)
    ref = np.zeros((5, g.n_nodes))
    for e in range(g.n_edges):
        i, j = g.edges[e]
        ref[:, i] += val_i[:, e]
        ref[:, j] += val_j[:, e]
    assert np.array_equal(out, ref)


def test_graph_from_dict_roundtrip(tmp_path):
    doc = {"n_nodes": 3,
           "edges": [[0, 1, 1.0], [1, 2, 2.0], [0, 2, 0.5]],
           "omega_tilde": [[0, 1, 4.0]]}
    g = graph_from_dict(doc)
    assert g.omega_tilde.tolist() == [4.0, 0.5, 2.0]

    g2 = graph_from_dict({"lattice": {"n": 4, "dx": 1.0}})
    assert g2.lattice is not None and g2.n_nodes == 4

    with pytest.raises(ConfigError):
        graph_from_dict({"edges": [[0, 1, 1.0]]})
    with pytest.raises(ConfigError):
        graph_from_dict({"lattice": {"n": 4, "dx": 1.0}, "n_nodes": 4,
                         "edges": [[0, 1, 1.0]]})
    with pytest.raises(ConfigError):
        graph_from_dict({"lattice": {"dx": 1.0}})
