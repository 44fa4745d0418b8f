"""Centralized per-round metrics for simulation traces.

These run after each round barrier with full knowledge of the network, so they
are kept apart from the agent logic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjectionError
from .graph import DirectedGraph
from .ortho import project_orthogonal
from .synccore import (
    EdgeTransformSet,
    SpectralSolution,
    build_undirected_laplacian,
    is_transitively_consistent,
    objective_f1,
    solve_spectral_relaxation,
)

__all__ = ["SpectralReference", "f1_ratio_gap", "project_all", "max_edge_residual"]


def project_all(mats) -> np.ndarray | None:
    """Project every matrix onto O(d); ``None`` if any projection is degenerate."""
    try:
        return np.array([project_orthogonal(M) for M in mats])
    except (DegenerateProjectionError, ValueError):
        return None


def max_edge_residual(g: DirectedGraph, T: EdgeTransformSet, outputs: np.ndarray) -> float:
    """``max_E ||R_i^T R_j - R_ij||_F`` for orthogonal outputs ``R_i``."""
    edges = np.array(g.edges, dtype=int)
    R = np.array([T[e] for e in g.edges])
    prod = np.transpose(outputs[edges[:, 0]], (0, 2, 1)) @ outputs[edges[:, 1]]
    return float(np.max(np.linalg.norm(prod - R, axis=(1, 2))))


@dataclass
class SpectralReference:
    """The relaxation optimum and the two reference collections the gaps compare against.

    ``projected`` holds ``Pr(Rbar_i)^T`` and ``inverse`` holds ``Rbar_i^{-1}``;
    ``f1_projected`` / ``f1_inverse`` are their objectives, ``None`` when the
    transforms are consistent and the gap is undefined.
    """

    solution: SpectralSolution
    projected: np.ndarray | None
    inverse: np.ndarray | None
    f1_projected: float | None
    f1_inverse: float | None
    consistent: bool

    @classmethod
    def build(cls, g: DirectedGraph, T: EdgeTransformSet, rel_tol: float = 1e-12) -> SpectralReference:
        Lu = build_undirected_laplacian(g, T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve_spectral_relaxation(Lu)
        blocks = sol.blocks()
        proj = project_all(blocks)
        projected = None if proj is None else np.transpose(proj, (0, 2, 1))
        try:
            inverse = np.linalg.inv(blocks)
        except np.linalg.LinAlgError:
            inverse = None
        floor = rel_tol * max(sum(g.weights.values()) * T.d, 1.0)
        f1p = objective_f1(g, T, projected) if projected is not None else None
        f1i = objective_f1(g, T, inverse) if inverse is not None else None
        try:
            consistent = is_transitively_consistent(g, T).consistent
        except ValueError:
            consistent = False
        if f1p is not None and f1p <= floor:
            f1p = None
        if f1i is not None and f1i <= floor:
            f1i = None
        return cls(sol, projected, inverse, f1p, f1i, consistent)

    def projected_blocks(self) -> np.ndarray | None:
        """``Pr(Rbar_i)``, i.e. the transpose of ``projected``."""
        return None if self.projected is None else np.transpose(self.projected, (0, 2, 1))


def f1_ratio_gap(g: DirectedGraph, T: EdgeTransformSet, collection, reference_f1: float | None) -> float | None:
    """``|f1(collection) / reference_f1 - 1|``, ``None`` when undefined."""
    if collection is None or reference_f1 is None:
        return None
    try:
        value = objective_f1(g, T, collection)
    except np.linalg.LinAlgError:
        return None
    return abs(value / reference_f1 - 1.0)
