"""Distributed synchronization of orthogonal matrices over directed graphs.

Agents on a graph hold noisy pairwise orthogonal transforms ``R_ij`` and
cooperatively estimate node matrices ``R_i`` with ``R_i^T R_j`` close to
``R_ij``. Two message-passing algorithms are provided, one for symmetric graphs
(:mod:`orthosync.algo1`) and one for directed graphs (:mod:`orthosync.algo2`),
alongside the centralized spectral relaxation they approximate.
"""
from .algo1 import run_algorithm1
from .algo2 import run_algorithm2
from .errors import (
    ConditionError,
    DegenerateProjectionError,
    DisconnectedGraphError,
    EigenOverflowError,
    InfeasibleDensityError,
    MissingMessageError,
    NumericalFailureError,
    OrthoSyncError,
    SimulationError,
    UndefinedGapError,
)
from .graph import DirectedGraph, classify, random_graph
from .netsim import ExperimentTrace, Network, synth_instance
from .ortho import project_orthogonal, random_orthogonal
from .synccore import (
    EdgeTransformSet,
    build_directed_laplacian,
    build_undirected_laplacian,
    check_conditions,
    gap,
    is_transitively_consistent,
    objective_f1,
    objective_f2,
    perturb_consistent,
    solve_spectral_relaxation,
)

__version__ = "0.1.0"

__all__ = [
    "run_algorithm1",
    "run_algorithm2",
    "ConditionError",
    "DegenerateProjectionError",
    "DisconnectedGraphError",
    "EigenOverflowError",
    "InfeasibleDensityError",
    "MissingMessageError",
    "NumericalFailureError",
    "OrthoSyncError",
    "SimulationError",
    "UndefinedGapError",
    "DirectedGraph",
    "classify",
    "random_graph",
    "ExperimentTrace",
    "Network",
    "synth_instance",
    "project_orthogonal",
    "random_orthogonal",
    "EdgeTransformSet",
    "build_directed_laplacian",
    "build_undirected_laplacian",
    "check_conditions",
    "gap",
    "is_transitively_consistent",
    "objective_f1",
    "objective_f2",
    "perturb_consistent",
    "solve_spectral_relaxation",
]
