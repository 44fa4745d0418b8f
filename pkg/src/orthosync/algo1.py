"""Distributed synchronization over symmetric graphs.

Each agent runs a block power iteration on ``I - eps1 L_undir``, corrects its
iterate by the locally estimated dominant eigenstructure (Subroutine 1), and
tracks the network average of the resulting column norms with a dynamic
average consensus so that it can normalize without global knowledge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConditionError,
    DegenerateProjectionError,
    EigenOverflowError,
    MissingMessageError,
    NumericalFailureError,
)
from .graph import DirectedGraph
from .netsim import ExperimentTrace, Network
from .observers import SpectralReference, f1_ratio_gap, max_edge_residual
from .ortho import SINGULAR_TOL, general_eigen, project_orthogonal
from .synccore import EdgeTransformSet, build_undirected_laplacian, check_conditions

__all__ = [
    "Agent1State",
    "Neighbor1Message",
    "Outputs",
    "Algorithm1Result",
    "init_agents",
    "publish",
    "step_R",
    "subroutine1",
    "step_consensus",
    "agent_step",
    "extract_outputs",
    "Algorithm1Observer",
    "ConservationMonitor",
    "conservation_residual",
    "run_algorithm1",
    "Horizons",
    "horizons",
    "HARD_CONDITIONS",
    "POSITIVITY_FLOOR",
]

POSITIVITY_FLOOR = 1e-12
HARD_CONDITIONS = ("T1.1", "T1.2", "T1.4", "T1.10")
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class Agent1State:
    """Local state of agent ``id`` after iteration ``k``.

    ``neighbors`` / ``Q_row`` / ``V_sum`` are the agent's fixed local data:
    ``Q_row[t] = a_ij R_ij + a_ji R_ji^T`` for ``j = neighbors[t]`` and
    ``V_sum = sum_j (a_ij + a_ji)``.
    """

    id: int
    neighbors: tuple[int, ...]
    Q_row: np.ndarray
    V_sum: float
    R_tilde: np.ndarray
    d_vec: np.ndarray
    d_tilde_prev: np.ndarray   # d~(k)
    d_tilde_prev2: np.ndarray  # d~(k-1)
    Q_tilde: np.ndarray
    k: int = 0
    fallback_active: bool = True


@dataclass(frozen=True)
class Neighbor1Message:
    sender: int
    R_tilde: np.ndarray
    d_vec: np.ndarray


@dataclass(frozen=True)
class Outputs:
    R: np.ndarray | None
    Q: np.ndarray | None
    reason: str = ""


def init_agents(g: DirectedGraph, T: EdgeTransformSet, initial_consensus: float = 1.0) -> list[Agent1State]:
    """Initial states: ``Rtilde = I``, ``d = initial_consensus``, ``d~(0) = d~(-1) = 1``.

    ``initial_consensus=0.0`` reproduces the alternative initialization under
    which ``d`` tracks the average of ``d~`` shifted by -1.
    """
    T.check_pairing(g)
    d = T.d
    agents = []
    for i in range(g.n):
        nbrs = g.neighbors(i)
        Q_row = np.array([
            g.weight(i, j) * T[(i, j)] + (g.weight(j, i) * T[(j, i)].T if g.has_edge(j, i) else 0.0)
            for j in nbrs
        ]).reshape(len(nbrs), d, d)
        V_sum = float(sum(g.weight(i, j) + g.weight(j, i) for j in nbrs))
        agents.append(Agent1State(
            id=i,
            neighbors=nbrs,
            Q_row=Q_row,
            V_sum=V_sum,
            R_tilde=np.eye(d),
            d_vec=np.full(d, float(initial_consensus)),
            d_tilde_prev=np.ones(d),
            d_tilde_prev2=np.ones(d),
            Q_tilde=np.eye(d),
        ))
    return agents


def publish(agent: Agent1State) -> Neighbor1Message:
    return Neighbor1Message(agent.id, agent.R_tilde, agent.d_vec)


def _gather(agent, messages: Mapping[int, Neighbor1Message]) -> list[Neighbor1Message]:
    try:
        return [messages[j] for j in agent.neighbors]
    except KeyError as exc:
        raise MissingMessageError(f"agent {agent.id}: {exc}") from None


def step_R(agent: Agent1State, messages: Mapping[int, Neighbor1Message], eps1: float) -> np.ndarray:
    """``Rtilde_i + eps1 * sum_j (Q_ij Rtilde_j - V_ij Rtilde_i)``."""
    msgs = _gather(agent, messages)
    R = agent.R_tilde
    if not msgs:
        return R.copy()
    neighbor_R = np.array([m.R_tilde for m in msgs])
    pull = np.sum(agent.Q_row @ neighbor_R, axis=0)
    return R + eps1 * (pull - agent.V_sum * R)


def _singular(M: np.ndarray) -> bool:
    s = np.linalg.svd(M, compute_uv=False)
    return not (s[0] > 0 and s[-1] >= SINGULAR_TOL * s[0] and np.all(np.isfinite(s)))


def subroutine1(R_prev: np.ndarray, R_cur: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Eigen-corrected iterate ``Q~`` and squared column norms ``d~``.

    Returns ``(Q_tilde, d_tilde, fell_back)``. When either iterate is singular or
    the quotient ``R_prev^{-1} R_cur`` lacks distinct, real, positive eigenvalues,
    falls back to ``(R_cur, ones, True)``.
    """
    d = R_cur.shape[0]
    if _singular(R_prev) or _singular(R_cur):
        return R_cur.copy(), np.ones(d), True
    quotient = np.linalg.solve(R_prev, R_cur)
    try:
        eig = general_eigen(quotient)
    except (NumericalFailureError, ValueError):
        return R_cur.copy(), np.ones(d), True
    if not (eig.all_real and eig.all_distinct and eig.all_positive):
        return R_cur.copy(), np.ones(d), True
    log_scale = -k * np.log(eig.eigenvalues)
    if np.any(log_scale > _LOG_MAX):
        raise EigenOverflowError(
            f"D^-k overflows at iteration {k} (largest exponent {log_scale.max():.1f} > {_LOG_MAX:.1f})", k
        )
    Q_tilde = (R_cur @ eig.P_inv) * np.exp(log_scale)
    d_tilde = np.sum(Q_tilde * Q_tilde, axis=0)
    return Q_tilde, d_tilde, False


def step_consensus(
    agent: Agent1State,
    messages: Mapping[int, Neighbor1Message],
    d_tilde_new: np.ndarray,
    eps2: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dynamic average consensus update.

    ``d(k) = d(k-1) + (d~(k-1) - d~(k-2)) + eps2 * sum_l (d_l(k-1) - d(k-1))``;
    returns ``(d(k), d~(k), d~(k-1))``, i.e. the new state and the rotated history.
    """
    msgs = _gather(agent, messages)
    mixing = np.zeros_like(agent.d_vec)
    for m in msgs:
        mixing += m.d_vec - agent.d_vec
    d_new = agent.d_vec + (agent.d_tilde_prev - agent.d_tilde_prev2) + eps2 * mixing
    return d_new, np.asarray(d_tilde_new, dtype=float), agent.d_tilde_prev


def agent_step(agent: Agent1State, messages: Mapping[int, Neighbor1Message], eps1: float, eps2: float) -> Agent1State:
    k = agent.k + 1
    R_new = step_R(agent, messages, eps1)
    Q_tilde, d_tilde, fell_back = subroutine1(agent.R_tilde, R_new, k)
    d_new, prev, prev2 = step_consensus(agent, messages, d_tilde, eps2)
    return replace(
        agent,
        R_tilde=R_new,
        d_vec=d_new,
        d_tilde_prev=prev,
        d_tilde_prev2=prev2,
        Q_tilde=Q_tilde,
        k=k,
        fallback_active=fell_back,
    )


def extract_outputs(agent: Agent1State, floor: float = POSITIVITY_FLOOR) -> Outputs:
    """``R_i = Pr(Rtilde_i)^T`` and ``Q_i = Pr(Q~_i D_i^{-1/2})^T``; absent outputs are ``None``."""
    reasons = []
    try:
        R_out = project_orthogonal(agent.R_tilde).T
    except (DegenerateProjectionError, ValueError):
        R_out = None
        reasons.append(f"R_{agent.id} withheld: singular Rtilde")
    d = agent.d_vec
    dmax = float(np.max(d))
    Q_out = None
    if not (dmax > 0 and np.all(d > floor * dmax)):
        reasons.append(f"Q_{agent.id} withheld: consensus state not positive")
    else:
        try:
            Q_out = project_orthogonal(agent.Q_tilde / np.sqrt(d)).T
        except (DegenerateProjectionError, ValueError):
            reasons.append(f"Q_{agent.id} withheld: singular Q~")
    return Outputs(R_out, Q_out, "; ".join(reasons))


@dataclass(frozen=True)
class Horizons:
    """Asymptotic iteration limits of Algorithm 1 in double precision.

    ``overflow``: where ``D^-k`` exceeds the float maximum, from the limiting
    quotient eigenvalues ``1 - eps1 lambda_s``. ``conditioning``: where the
    column scales of ``Rtilde`` differ by ``1/machine_eps``, after which the
    slowest-decaying columns are lost to roundoff.
    """

    overflow: float
    conditioning: float


def horizons(g: DirectedGraph, T: EdgeTransformSet, eps1: float | None = None) -> Horizons:
    eps1 = 1.0 / (2 * g.n) if eps1 is None else eps1
    lam = np.linalg.eigvalsh(build_undirected_laplacian(g, T).matrix)[: T.d]
    rho = 1.0 - eps1 * lam
    if np.any(rho <= 0):
        return Horizons(math.inf, math.inf)
    decay = -math.log(float(rho[-1]))
    overflow = _LOG_MAX / decay if decay > 0 else math.inf
    spread = math.log(float(rho[0] / rho[-1]))
    conditioning = -math.log(np.finfo(float).eps) / spread if spread > 0 else math.inf
    return Horizons(overflow, conditioning)


def conservation_residual(agents: Sequence[Agent1State]) -> float:
    """Relative mismatch ``max_s |sum_i d_is(k) - sum_i d~_is(k-1)| / max_s |sum_i d~_is(k-1)|``."""
    d_sum = np.sum([a.d_vec for a in agents], axis=0)
    dt_sum = np.sum([a.d_tilde_prev2 for a in agents], axis=0)
    scale = max(float(np.max(np.abs(dt_sum))), np.finfo(float).tiny)
    return float(np.max(np.abs(d_sum - dt_sum)) / scale)


class ConservationMonitor:
    """Records :func:`conservation_residual` after every round."""

    def __init__(self):
        self.residuals: list[float] = []

    def __call__(self, k: int, agents: Sequence[Agent1State]) -> None:
        self.residuals.append(conservation_residual(agents))

    @property
    def worst(self) -> float:
        return max(self.residuals, default=0.0)


class Algorithm1Observer:
    """Gap and diagnostic metrics for Algorithm 1 runs.

    Produces ``gap_R``, ``gap_Q``, ``gap_Rtilde_inv``, ``gap_Qtilde_inv``,
    ``fallback_count``, ``notes`` plus ``edge_residual_R``, ``edge_residual_Q``,
    ``spectral_edge_error_Q`` (max over edges of
    ``||Q_i^T Q_j - Pr(Rbar_i) Pr(Rbar_j)^T||_F``), ``relative_error_Rtilde``
    (max over edges of ``||Rtilde_i Rtilde_j^{-1} - Rbar_i Rbar_j^{-1}||_F``)
    and ``conservation_residual``.
    """

    def __init__(self, g: DirectedGraph, T: EdgeTransformSet, reference: SpectralReference | None = None,
                 gaps: bool = True):
        self.g, self.T = g, T
        self.reference = reference if reference is not None or not gaps else SpectralReference.build(g, T)
        self.gaps = gaps
        edges = np.array(g.edges, dtype=int)
        self._src, self._dst = edges[:, 0], edges[:, 1]
        if self.reference is not None and self.reference.projected is not None:
            P = self.reference.projected_blocks()
            self._target = P[self._src] @ np.transpose(P[self._dst], (0, 2, 1))
        else:
            self._target = None
        self._relative = None
        if self.reference is not None and self.reference.inverse is not None:
            Rbar = self.reference.solution.blocks()
            self._relative = Rbar[self._src] @ self.reference.inverse[self._dst]

    def __call__(self, k: int, agents: Sequence[Agent1State]) -> dict:
        outs = [extract_outputs(a) for a in agents]
        notes = [o.reason for o in outs if o.reason]
        R_all = None if any(o.R is None for o in outs) else np.array([o.R for o in outs])
        Q_all = None if any(o.Q is None for o in outs) else np.array([o.Q for o in outs])
        row = {
            "fallback_count": int(sum(a.fallback_active for a in agents)) if k > 0 else 0,
            "conservation_residual": conservation_residual(agents),
            "edge_residual_R": max_edge_residual(self.g, self.T, R_all) if R_all is not None else None,
            "edge_residual_Q": max_edge_residual(self.g, self.T, Q_all) if Q_all is not None else None,
        }
        if self._relative is not None:
            R_tilde = np.array([a.R_tilde for a in agents])
            inv = _safe_inv(R_tilde)
            if inv is not None:
                rel = R_tilde[self._src] @ inv[self._dst]
                row["relative_error_Rtilde"] = float(np.max(np.linalg.norm(rel - self._relative, axis=(1, 2))))
        if Q_all is not None and self._target is not None:
            QtQ = np.transpose(Q_all[self._src], (0, 2, 1)) @ Q_all[self._dst]
            row["spectral_edge_error_Q"] = float(np.max(np.linalg.norm(QtQ - self._target, axis=(1, 2))))
        if self.gaps:
            ref = self.reference
            if ref.f1_projected is None:
                notes.append("gap undefined: transforms consistent")
            g, T = self.g, self.T
            R_tilde = np.array([a.R_tilde for a in agents])
            Q_tilde = np.array([a.Q_tilde for a in agents])
            row["gap_R"] = f1_ratio_gap(g, T, R_all, ref.f1_projected)
            row["gap_Q"] = f1_ratio_gap(g, T, Q_all, ref.f1_projected)
            row["gap_Rtilde_inv"] = f1_ratio_gap(g, T, _safe_inv(R_tilde), ref.f1_inverse)
            row["gap_Qtilde_inv"] = f1_ratio_gap(g, T, _safe_inv(Q_tilde), ref.f1_inverse)
        row["notes"] = "; ".join(notes)
        return row


def _safe_inv(M: np.ndarray) -> np.ndarray | None:
    try:
        out = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return None
    return out if np.all(np.isfinite(out)) else None


@dataclass
class Algorithm1Result:
    agents: list[Agent1State]
    trace: ExperimentTrace
    network: Network
    reference: SpectralReference | None
    conservation: ConservationMonitor

    def stacked_R_tilde(self) -> np.ndarray:
        return np.concatenate([a.R_tilde for a in self.agents], axis=0)

    def outputs(self) -> list[Outputs]:
        return [extract_outputs(a) for a in self.agents]


def run_algorithm1(
    g: DirectedGraph,
    T: EdgeTransformSet,
    eps1: float | None = None,
    eps2: float | None = None,
    iterations: int = 1000,
    observers=None,
    gaps: bool = True,
    workers: int = 1,
    record_every: int = 1,
    force: bool = False,
    initial_consensus: float = 1.0,
    run_id: int = 0,
    audit: bool = False,
) -> Algorithm1Result:
    """Run Algorithm 1 for ``iterations`` synchronous rounds.

    Step sizes default to ``1/(2n)``. Unless ``force`` is set, the instance must
    be symmetric and connected with orthogonal transforms and step sizes inside
    their stability bounds; otherwise :class:`ConditionError` is raised.
    ``observers`` replaces the default :class:`Algorithm1Observer`.
    """
    eps1 = 1.0 / (2 * g.n) if eps1 is None else eps1
    eps2 = 1.0 / (2 * g.n) if eps2 is None else eps2
    if not force:
        report = check_conditions(g, T, eps1=eps1, eps2=eps2)
        failed = report.failed(HARD_CONDITIONS)
        if failed:
            raise ConditionError("Algorithm 1 preconditions violated:\n" + "\n".join(
                f"  {k}: {report[k].description} (margin {report[k].margin:+.3e})" for k in failed))
    reference = None
    if observers is None:
        obs = Algorithm1Observer(g, T, gaps=gaps)
        reference = obs.reference
        observers = [obs]
    monitor = ConservationMonitor()
    net = Network(g, init_agents(g, T, initial_consensus), publish, audit=audit)
    trace = net.run_rounds(
        lambda agent, box: agent_step(agent, box, eps1, eps2),
        iterations,
        observers,
        workers=workers,
        run_id=run_id,
        record_every=record_every,
        monitors=[monitor],
    )
    return Algorithm1Result(net.agents, trace, net, reference, monitor)
