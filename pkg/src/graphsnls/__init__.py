"""Stochastic nonlinear Schrodinger dynamics and control on finite graphs."""

__version__ = "0.1.0"

from .graphs import (Graph, LatticeSpec, build_graph, build_ring_lattice,
                     complete_graph, graph_from_dict)
from .model import (EnergyMix, MadelungState, ModelParams, params_from_dict,
                    snls1_params, snls2_params, uniform_state)

__all__ = [
    "Graph", "LatticeSpec", "build_graph", "build_ring_lattice",
    "complete_graph", "graph_from_dict",
    "EnergyMix", "MadelungState", "ModelParams", "params_from_dict",
    "snls1_params", "snls2_params", "uniform_state",
    "__version__",
]
