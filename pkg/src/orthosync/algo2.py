"""Distributed synchronization over directed graphs.

Each agent pulls its iterate toward the transformed iterates of its
out-neighbors, ``Rtilde_i += eps3 * sum_j a_ij (R_ij Rtilde_j - Rtilde_i)``,
which is the block power iteration on ``I - eps3 L_dir``. No symmetry of the
graph or of the transforms is assumed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConditionError, DegenerateProjectionError, MissingMessageError
from .graph import DirectedGraph, classify
from .netsim import ExperimentTrace, Network
from .observers import SpectralReference, f1_ratio_gap, max_edge_residual
from .ortho import project_orthogonal
from .synccore import EdgeTransformSet, build_directed_laplacian, check_conditions

__all__ = [
    "Agent2State",
    "Neighbor2Message",
    "Algorithm2Result",
    "init_agents",
    "publish",
    "step_R_directed",
    "agent_step",
    "extract_output",
    "lyapunov_max_norm",
    "spectral_containment",
    "Algorithm2Observer",
    "run_algorithm2",
    "HARD_CONDITIONS",
]

HARD_CONDITIONS = ("T2.3", "T2.5")


@dataclass(frozen=True)
class Agent2State:
    """Local state of agent ``id``; ``W_row[t] = a_ij R_ij`` for ``j = neighbors[t]``."""

    id: int
    neighbors: tuple[int, ...]
    W_row: np.ndarray
    weight_sum: float
    R_tilde: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class Neighbor2Message:
    sender: int
    R_tilde: np.ndarray


def init_agents(g: DirectedGraph, T: EdgeTransformSet, R0: np.ndarray | None = None) -> list[Agent2State]:
    """Initial states, ``Rtilde_i(0) = I`` unless ``R0`` (shape ``(n, d, d)``) is given."""
    d = T.d
    agents = []
    for i in range(g.n):
        nbrs = g.neighbors(i)
        W_row = np.array([g.weight(i, j) * T[(i, j)] for j in nbrs]).reshape(len(nbrs), d, d)
        start = np.eye(d) if R0 is None else np.array(R0[i], dtype=float)
        agents.append(Agent2State(i, nbrs, W_row, float(sum(g.weight(i, j) for j in nbrs)), start))
    return agents


def publish(agent: Agent2State) -> Neighbor2Message:
    return Neighbor2Message(agent.id, agent.R_tilde)


def step_R_directed(agent: Agent2State, messages: Mapping[int, Neighbor2Message], eps3: float) -> np.ndarray:
    try:
        msgs = [messages[j] for j in agent.neighbors]
    except KeyError as exc:
        raise MissingMessageError(f"agent {agent.id}: {exc}") from None
    R = agent.R_tilde
    if not msgs:
        return R.copy()
    pull = np.sum(agent.W_row @ np.array([m.R_tilde for m in msgs]), axis=0)
    return R + eps3 * (pull - agent.weight_sum * R)


def agent_step(agent: Agent2State, messages: Mapping[int, Neighbor2Message], eps3: float) -> Agent2State:
    return replace(agent, R_tilde=step_R_directed(agent, messages, eps3), k=agent.k + 1)


def extract_output(agent: Agent2State) -> np.ndarray | None:
    """``Pr(Rtilde_i)^T``, ``None`` when the iterate is singular."""
    try:
        return project_orthogonal(agent.R_tilde).T
    except (DegenerateProjectionError, ValueError):
        return None


def lyapunov_max_norm(agents: Sequence[Agent2State]) -> np.ndarray:
    """Per-column ``V_c = max_i ||column c of Rtilde_i||^2``.

    With orthogonal R_ij and ``eps3 * sum_j a_ij <= 1`` every update is a convex
    combination of norm-preserving images, so each ``V_c`` is non-increasing.
    """
    stacked = np.array([a.R_tilde for a in agents])
    return np.max(np.sum(stacked * stacked, axis=1), axis=0)


def spectral_containment(g: DirectedGraph, T: EdgeTransformSet, eps3: float | None = None) -> float:
    """Spectral radius of ``I - eps3 L_dir`` (centralized diagnostic; ``<= 1`` is the stable case)."""
    eps3 = 1.0 / (2 * g.n) if eps3 is None else eps3
    Ld = build_directed_laplacian(g, T).matrix
    return float(np.max(np.abs(np.linalg.eigvals(np.eye(Ld.shape[0]) - eps3 * Ld))))


class Algorithm2Observer:
    """``gap_R``, ``gap_Rtilde_inv``, ``edge_residual_R``, ``lyapunov`` and ``notes`` per recorded round."""

    def __init__(self, g: DirectedGraph, T: EdgeTransformSet, reference: SpectralReference | None = None,
                 gaps: bool = True):
        self.g, self.T = g, T
        self.gaps = gaps
        self.reference = reference if reference is not None or not gaps else SpectralReference.build(g, T)

    def __call__(self, k: int, agents: Sequence[Agent2State]) -> dict:
        outs = [extract_output(a) for a in agents]
        notes = [f"R_{a.id} withheld: singular Rtilde" for a, o in zip(agents, outs) if o is None]
        R_all = None if notes else np.array(outs)
        row = {
            "edge_residual_R": max_edge_residual(self.g, self.T, R_all) if R_all is not None else None,
            "lyapunov": float(np.max(lyapunov_max_norm(agents))),
            "fallback_count": 0,
        }
        if self.gaps:
            ref = self.reference
            if ref.f1_projected is None:
                notes.append("gap undefined: transforms consistent")
            R_tilde = np.array([a.R_tilde for a in agents])
            try:
                inv = np.linalg.inv(R_tilde)
            except np.linalg.LinAlgError:
                inv = None
            row["gap_R"] = f1_ratio_gap(self.g, self.T, R_all, ref.f1_projected)
            row["gap_Rtilde_inv"] = f1_ratio_gap(self.g, self.T, inv, ref.f1_inverse)
        row["notes"] = "; ".join(notes)
        return row


@dataclass
class Algorithm2Result:
    agents: list[Agent2State]
    trace: ExperimentTrace
    network: Network
    reference: SpectralReference | None

    def stacked_R_tilde(self) -> np.ndarray:
        return np.concatenate([a.R_tilde for a in self.agents], axis=0)

    def outputs(self) -> list[np.ndarray | None]:
        return [extract_output(a) for a in self.agents]


def run_algorithm2(
    g: DirectedGraph,
    T: EdgeTransformSet,
    eps3: float | None = None,
    iterations: int = 1000,
    observers=None,
    gaps: bool = True,
    workers: int = 1,
    record_every: int = 1,
    force: bool = False,
    R0: np.ndarray | None = None,
    run_id: int = 0,
    audit: bool = False,
    preflight: bool = False,
) -> Algorithm2Result:
    """Run Algorithm 2 for ``iterations`` synchronous rounds.

    ``eps3`` defaults to ``1/(2n)``. Unless ``force`` is set, non-orthogonal
    transforms or an unstable step size raise :class:`ConditionError`; a graph
    that is not quasi-strongly connected only triggers a ``RuntimeWarning``.
    ``preflight`` additionally warns when ``I - eps3 L_dir`` has spectral
    radius above one.
    """
    eps3 = 1.0 / (2 * g.n) if eps3 is None else eps3
    if not force:
        report = check_conditions(g, T, eps3=eps3)
        failed = report.failed(HARD_CONDITIONS)
        if failed:
            raise ConditionError("Algorithm 2 preconditions violated:\n" + "\n".join(
                f"  {k}: {report[k].description} (margin {report[k].margin:+.3e})" for k in failed))
    if not classify(g).quasi_strongly_connected:
        warnings.warn("graph is not quasi-strongly connected; iterates need not synchronize", RuntimeWarning,
                      stacklevel=2)
    if preflight:
        rho = spectral_containment(g, T, eps3)
        if rho > 1 + 1e-12:
            warnings.warn(f"spectral radius of I - eps3 L_dir is {rho:.12g} > 1", RuntimeWarning, stacklevel=2)
    reference = None
    if observers is None:
        obs = Algorithm2Observer(g, T, gaps=gaps)
        reference = obs.reference
        observers = [obs]
    net = Network(g, init_agents(g, T, R0), publish, audit=audit)
    trace = net.run_rounds(
        lambda agent, box: agent_step(agent, box, eps3),
        iterations,
        observers,
        workers=workers,
        run_id=run_id,
        record_every=record_every,
    )
    return Algorithm2Result(net.agents, trace, net, reference)
