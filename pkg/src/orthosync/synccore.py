"""Block connection Laplacians, synchronization objectives and the spectral relaxation.

Conventions
-----------
A node collection ``C`` is an array of shape ``(n, d, d)``. Its stacking
``U_1(C)`` is the ``(n d, d)`` matrix whose i-th block is ``C_i^{-1}``; a
transform set is transitively consistent iff ``R_ij = C_i^{-1} C_j`` for some
invertible collection, and then ``U_1(C)`` spans the Laplacian nullspace.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DisconnectedGraphError, UndefinedGapError
from .graph import DirectedGraph, classify, scalar_laplacian
from .ortho import project_orthogonal, spectral_norm, symmetric_eigen

__all__ = [
    "EdgeTransformSet",
    "BlockLaplacian",
    "SpectralSolution",
    "Condition",
    "ConditionReport",
    "ConsistencyResult",
    "build_undirected_laplacian",
    "build_directed_laplacian",
    "laplacian_split_residual",
    "reversed_instance",
    "stack_U1",
    "objective_f1",
    "objective_f1_trace",
    "objective_f2",
    "objective_f2_trace",
    "nullity",
    "is_transitively_consistent",
    "solve_spectral_relaxation",
    "check_conditions",
    "gap",
    "perturb_consistent",
    "nullspace_containment",
    "edge_residuals",
    "consistent_transforms",
    "read_transforms",
    "write_transforms",
    "format_transforms",
    "parse_transforms",
    "NULLITY_TOL",
    "ALG1_REQUIRED",
    "ALG2_REQUIRED",
]

NULLITY_TOL = 1e-9
ORTHO_TOL = 1e-8

# conditions the convergence results of each algorithm rely on
ALG1_REQUIRED = ("T1.1", "T1.2", "T1.4", "T1.6", "T1.7", "T1.8", "T1.9", "T1.10")
ALG2_REQUIRED = ("T2.1", "T2.3", "T2.5", "T2.6")


@dataclass
class EdgeTransformSet:
    """Relative transforms ``R_ij`` for every directed edge of a graph."""

    d: int
    transforms: dict[tuple[int, int], np.ndarray]

    def __post_init__(self):
        clean = {}
        for (i, j), R in self.transforms.items():
            R = np.array(R, dtype=float)
            if R.shape != (self.d, self.d):
                raise ValueError(f"transform on edge ({i}, {j}) has shape {R.shape}, expected {(self.d, self.d)}")
            clean[(int(i), int(j))] = R
        self.transforms = dict(sorted(clean.items()))

    def __getitem__(self, edge) -> np.ndarray:
        return self.transforms[edge]

    def __len__(self):
        return len(self.transforms)

    def check_pairing(self, g: DirectedGraph) -> None:
        if set(self.transforms) != set(g.weights):
            missing = set(g.weights) - set(self.transforms)
            extra = set(self.transforms) - set(g.weights)
            raise ValueError(f"transform set does not match graph edges (missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]})")

    def orthogonality_residual(self) -> float:
        eye = np.eye(self.d)
        return max((np.linalg.norm(R.T @ R - eye) for R in self.transforms.values()), default=0.0)

    def is_orthogonal(self, tol: float = ORTHO_TOL) -> bool:
        return self.orthogonality_residual() <= tol

    def replace(self, updates: Mapping[tuple[int, int], np.ndarray]) -> EdgeTransformSet:
        merged = dict(self.transforms)
        merged.update(updates)
        return EdgeTransformSet(self.d, merged)


@dataclass(frozen=True)
class BlockLaplacian:
    n: int
    d: int
    matrix: np.ndarray
    kind: str  # "undirected" | "directed"

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.d
        return self.matrix[i * d:(i + 1) * d, j * d:(j + 1) * d]


def _check(g: DirectedGraph, T: EdgeTransformSet) -> None:
    T.check_pairing(g)


def _assemble_W(g: DirectedGraph, T: EdgeTransformSet) -> np.ndarray:
    n, d = g.n, T.d
    W = np.zeros((n * d, n * d))
    for (i, j), a in g.weights.items():
        W[i * d:(i + 1) * d, j * d:(j + 1) * d] = a * T[(i, j)]
    return W


def build_undirected_laplacian(g: DirectedGraph, T: EdgeTransformSet) -> BlockLaplacian:
    """``diag(A 1) (x) I + blockdiag(Wbar^T Wbar) - (W + W^T)``."""
    _check(g, T)
    n, d = g.n, T.d
    A = g.adjacency()
    L = np.kron(np.diag(A.sum(axis=1)), np.eye(d))
    for (i, j), a in g.weights.items():
        R = T[(i, j)]
        L[j * d:(j + 1) * d, j * d:(j + 1) * d] += a * R.T @ R
    W = _assemble_W(g, T)
    L -= W + W.T
    return BlockLaplacian(n, d, (L + L.T) / 2, "undirected")


def build_directed_laplacian(g: DirectedGraph, T: EdgeTransformSet) -> BlockLaplacian:
    """``diag(A 1) (x) I - W``."""
    _check(g, T)
    A = g.adjacency()
    L = np.kron(np.diag(A.sum(axis=1)), np.eye(T.d)) - _assemble_W(g, T)
    return BlockLaplacian(g.n, T.d, L, "directed")


def reversed_instance(g: DirectedGraph, T: EdgeTransformSet) -> tuple[DirectedGraph, EdgeTransformSet]:
    """Reversed graph with ``Rbar_ij = R_ji^T``."""
    return g.reversed(), EdgeTransformSet(T.d, {(j, i): R.T for (i, j), R in T.transforms.items()})


def laplacian_split_residual(g: DirectedGraph, T: EdgeTransformSet) -> float:
    """``||L_undir - (L_dir + Lbar_dir)||_F`` where ``Lbar_dir`` lives on the reversed graph.

    Zero (to rounding) whenever the transforms are orthogonal.
    """
    Lu = build_undirected_laplacian(g, T).matrix
    Ld = build_directed_laplacian(g, T).matrix
    Lbar = build_directed_laplacian(*reversed_instance(g, T)).matrix
    return float(np.linalg.norm(Lu - Ld - Lbar))


def _as_collection(C, n: int | None = None, d: int | None = None) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 3 or C.shape[1] != C.shape[2]:
        raise ValueError(f"node collection must have shape (n, d, d), got {C.shape}")
    if n is not None and C.shape[0] != n:
        raise ValueError(f"collection has {C.shape[0]} nodes, graph has {n}")
    if d is not None and C.shape[1] != d:
        raise ValueError(f"collection has d={C.shape[1]}, transforms have d={d}")
    return C


def _inverse_blocks(C: np.ndarray) -> np.ndarray:
    for i, Ci in enumerate(C):
        s = np.linalg.svd(Ci, compute_uv=False)
        if s[0] == 0 or s[-1] < 1e-14 * s[0]:
            raise np.linalg.LinAlgError(f"collection member {i} is singular")
    return np.linalg.inv(C)


def stack_U1(C) -> np.ndarray:
    """Stack ``C_i^{-1}`` into an ``(n d, d)`` matrix."""
    C = _as_collection(C)
    n, d, _ = C.shape
    return _inverse_blocks(C).reshape(n * d, d)


def _edge_arrays(g: DirectedGraph, T: EdgeTransformSet):
    edges = np.array(g.edges, dtype=int).reshape(-1, 2)
    a = np.array([g.weights[e] for e in g.edges])
    R = np.array([T[e] for e in g.edges]).reshape(-1, T.d, T.d)
    return edges, a, R


def objective_f1(g: DirectedGraph, T: EdgeTransformSet, C) -> float:
    """``sum_E a_ij/2 ||R_ij - C_i^{-1} C_j||_F^2``.

    For orthogonal collections ``C_i^{-1} = C_i^T`` and this is the usual
    least-squares synchronization cost. The inverse form makes the value
    invariant under a common left factor ``C_i -> M C_i`` (e.g. a shared scalar),
    which is what lets decaying iterates such as ``Rtilde_i^{-1}`` be compared.
    """
    C = _as_collection(C, g.n, T.d)
    edges, a, R = _edge_arrays(g, T)
    if len(a) == 0:
        return 0.0
    Cinv = _inverse_blocks(C)
    diff = R - Cinv[edges[:, 0]] @ C[edges[:, 1]]
    return float(0.5 * np.sum(a * np.sum(diff * diff, axis=(1, 2))))


def objective_f1_trace(L: BlockLaplacian, C) -> float:
    """``1/2 tr(U_1^T L U_1)``; equals :func:`objective_f1` for orthogonal collections."""
    U = stack_U1(C)
    return float(0.5 * np.trace(U.T @ L.matrix @ U))


def objective_f2(g: DirectedGraph, T: EdgeTransformSet, C) -> float:
    """``sum_i 1/2 ||sum_{j in N_i} a_ij (R_ij C_j^{-1} - C_i^{-1})||_F^2``."""
    C = _as_collection(C, g.n, T.d)
    Cinv = _inverse_blocks(C)
    total = 0.0
    for i in range(g.n):
        acc = np.zeros((T.d, T.d))
        for j in g.neighbors(i):
            acc += g.weights[(i, j)] * (T[(i, j)] @ Cinv[j] - Cinv[i])
        total += 0.5 * float(np.sum(acc * acc))
    return total


def objective_f2_trace(Ld: BlockLaplacian, C) -> float:
    U = stack_U1(C)
    LU = Ld.matrix @ U
    return float(0.5 * np.trace(LU.T @ LU))


def edge_residuals(g: DirectedGraph, T: EdgeTransformSet, C) -> np.ndarray:
    """Per-edge ``||C_i^{-1} C_j - R_ij||_F`` in ``g.edges`` order."""
    C = _as_collection(C, g.n, T.d)
    edges, _, R = _edge_arrays(g, T)
    if len(edges) == 0:
        return np.zeros(0)
    Cinv = np.linalg.inv(C)
    return np.linalg.norm(Cinv[edges[:, 0]] @ C[edges[:, 1]] - R, axis=(1, 2))


def consistent_transforms(g: DirectedGraph, C) -> EdgeTransformSet:
    """Transforms ``R_ij = C_i^{-1} C_j`` generated by a node collection."""
    C = _as_collection(C, g.n)
    Cinv = _inverse_blocks(C)
    return EdgeTransformSet(C.shape[1], {(i, j): Cinv[i] @ C[j] for i, j in g.edges})


# --- transitive consistency ---------------------------------------------------

def nullity(L: BlockLaplacian, tol: float = NULLITY_TOL) -> int:
    """Eigenvalues of a symmetric Laplacian below ``tol * max(lambda_max, 1)``."""
    lam, _ = symmetric_eigen(L.matrix)
    return int(np.sum(lam < tol * max(lam[-1], 1.0)))


@dataclass
class ConsistencyResult:
    consistent: bool
    spectral_consistent: bool
    constructive_consistent: bool
    nullity: int
    witness: np.ndarray | None
    max_residual: float


def _spanning_labels(g: DirectedGraph, T: EdgeTransformSet) -> np.ndarray:
    n, d = g.n, T.d
    labels = np.zeros((n, d, d))
    labels[0] = np.eye(d)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in g.neighbors(i):
            if not seen[j]:
                # R_ij = R_i^{-1} R_j
                labels[j] = labels[i] @ T[(i, j)]
                seen[j] = True
                queue.append(j)
        for j in g.in_neighbors(i):
            if not seen[j]:
                # R_ji = R_j^{-1} R_i  =>  R_j = R_i R_ji^{-1}
                labels[j] = labels[i] @ np.linalg.inv(T[(j, i)])
                seen[j] = True
                queue.append(j)
    return labels


def is_transitively_consistent(
    g: DirectedGraph,
    T: EdgeTransformSet,
    tol: float = NULLITY_TOL,
    residual_tol: float = 1e-8,
) -> ConsistencyResult:
    """Decide transitive consistency two independent ways.

    * spectral: the nullity of ``L_undir`` equals ``d``;
    * constructive: labels propagated from ``R_0 = I`` along a BFS tree satisfy
      ``||R_ij - R_i^{-1} R_j||_F <= residual_tol * max(1, ||R_ij||_F)`` on every edge.

    ``consistent`` is true only when both agree.
    """
    _check(g, T)
    if not classify(g).connected:
        raise DisconnectedGraphError("transitive consistency test needs a connected graph")
    k = nullity(build_undirected_laplacian(g, T), tol)
    labels = _spanning_labels(g, T)
    worst = 0.0
    for (i, j), R in T.transforms.items():
        r = np.linalg.norm(R - np.linalg.solve(labels[i], labels[j])) / max(1.0, np.linalg.norm(R))
        worst = max(worst, float(r))
    constructive = worst <= residual_tol
    spectral = k == T.d
    return ConsistencyResult(
        consistent=spectral and constructive,
        spectral_consistent=spectral,
        constructive_consistent=constructive,
        nullity=k,
        witness=labels if constructive else None,
        max_residual=worst,
    )


# --- spectral relaxation ------------------------------------------------------

@dataclass
class SpectralSolution:
    """Optimum of ``min 1/2 tr(X^T L X)`` subject to ``X^T X = n I``."""

    X: np.ndarray
    eigenvalues: np.ndarray
    next_eigenvalue: float
    objective: float
    n: int
    d: int
    warnings: list[str] = field(default_factory=list)

    def blocks(self) -> np.ndarray:
        """The ``Rbar_i`` blocks of ``X``, shape ``(n, d, d)``."""
        return self.X.reshape(self.n, self.d, self.d)

    def projected_blocks(self) -> np.ndarray:
        return np.array([project_orthogonal(B) for B in self.blocks()])

    @property
    def eigengap(self) -> float:
        return float(self.next_eigenvalue - self.eigenvalues[-1])


def solve_spectral_relaxation(Lu: BlockLaplacian, gap_tol: float = NULLITY_TOL) -> SpectralSolution:
    if Lu.kind != "undirected":
        raise ValueError("spectral relaxation needs the undirected Laplacian")
    n, d = Lu.n, Lu.d
    lam, V = symmetric_eigen(Lu.matrix)
    Vd = V[:, :d].copy()
    pivots = Vd[np.argmax(np.abs(Vd), axis=0), np.arange(d)]
    Vd *= np.sign(pivots)
    X = np.sqrt(n) * Vd
    next_lam = float(lam[d]) if n * d > d else float("inf")
    sol = SpectralSolution(
        X=X,
        eigenvalues=lam[:d].copy(),
        next_eigenvalue=next_lam,
        objective=float(0.5 * np.trace(X.T @ Lu.matrix @ X)),
        n=n,
        d=d,
    )
    scale = max(float(lam[-1]), 1.0)
    if n > 1 and sol.eigengap <= gap_tol * scale:
        msg = (
            f"d-th and (d+1)-th smallest eigenvalues coincide ({lam[d - 1]:.3e} vs {lam[d]:.3e}); "
            "the optimal subspace is not unique"
        )
        sol.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return sol


# --- convergence conditions ---------------------------------------------------

@dataclass(frozen=True)
class Condition:
    key: str
    description: str
    passed: bool
    margin: float
    note: str = ""


@dataclass
class ConditionReport:
    """Pass/fail with a numeric margin for each table condition.

    A positive margin means the condition holds with that much room; structural
    conditions (connectivity, symmetry) report +1 / -1.
    """

    conditions: dict[str, Condition]
    recommended_eps1: float
    recommended_eps2: float
    recommended_eps3: float
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, key: str) -> Condition:
        return self.conditions[key]

    def failed(self, required=None) -> list[str]:
        keys = self.conditions if required is None else required
        return [k for k in keys if k in self.conditions and not self.conditions[k].passed]

    def render(self) -> str:
        lines = []
        for c in self.conditions.values():
            status = "PASS" if c.passed else "FAIL"
            extra = f"  ({c.note})" if c.note else ""
            lines.append(f"{c.key:<6} {status}  margin={c.margin:+.6e}  {c.description}{extra}")
        lines.append(
            f"recommended eps1={self.recommended_eps1:.6g} eps2={self.recommended_eps2:.6g} eps3={self.recommended_eps3:.6g}"
        )
        lines += [f"note: {s}" for s in self.notes]
        return "\n".join(lines)


def _structural(key, description, ok, note=""):
    return Condition(key, description, bool(ok), 1.0 if ok else -1.0, note)


def check_conditions(
    g: DirectedGraph,
    T: EdgeTransformSet,
    Lu: BlockLaplacian | None = None,
    Ld: BlockLaplacian | None = None,
    eps1: float | None = None,
    eps2: float | None = None,
    eps3: float | None = None,
    delta1: float | None = None,
    delta2: float | None = None,
    tol: float = NULLITY_TOL,
) -> ConditionReport:
    """Evaluate both convergence-condition tables for an instance.

    Step sizes left as ``None`` are taken to be ``1/(2n)``.
    """
    _check(g, T)
    n, d = g.n, T.d
    default_eps = 1.0 / (2 * n)
    eps1 = default_eps if eps1 is None else eps1
    eps2 = default_eps if eps2 is None else eps2
    eps3 = default_eps if eps3 is None else eps3
    Lu = build_undirected_laplacian(g, T) if Lu is None else Lu
    Ld = build_directed_laplacian(g, T) if Ld is None else Ld
    report = classify(g)
    A = g.adjacency()
    S = A + A.T
    conds: dict[str, Condition] = {}
    notes: list[str] = []

    lam, _ = symmetric_eigen(Lu.matrix)
    lam_scale = max(float(lam[-1]), 1.0)
    zero_thr = tol * lam_scale

    conds["T1.1"] = _structural("T1.1", "graph is connected and symmetric", report.connected and report.symmetric)
    ortho_res = T.orthogonality_residual()
    conds["T1.2"] = Condition("T1.2", "all R_ij orthogonal", ortho_res <= ORTHO_TOL, ORTHO_TOL - ortho_res)
    if report.connected:
        k = int(np.sum(lam < zero_thr))
        conds["T1.3"] = Condition(
            "T1.3", "transforms transitively consistent (nullity of L_undir = d)", k == d,
            float(zero_thr - lam[d - 1]), f"nullity={k}",
        )
    else:
        conds["T1.3"] = _structural("T1.3", "transforms transitively consistent", False, "graph disconnected")
    P = np.diag(S.sum(axis=1)) + S
    normP = spectral_norm(P)
    conds["T1.4"] = Condition("T1.4", "eps1 < 2/||P||_2", eps1 < 2 / normP, 2 / normP - eps1, f"||P||_2={normP:.6g}")
    Lbar = np.diag(S.sum(axis=1)) - S
    normLbar = spectral_norm(Lbar)
    bound5 = 2 / normLbar if normLbar > 0 else np.inf
    conds["T1.5"] = Condition("T1.5", "eps1 < 2/||Lbar||_2", eps1 < bound5, bound5 - eps1, f"||Lbar||_2={normLbar:.6g}")

    sol = solve_spectral_relaxation(Lu) if not _quiet_gap(lam, d, zero_thr) else _silent_solve(Lu)
    blocks = sol.blocks()
    smin = [np.linalg.svd(B, compute_uv=False) for B in blocks]
    margin6 = min(s[-1] / max(s[0], 1e-300) for s in smin)
    conds["T1.6"] = Condition("T1.6", "every block Rbar_i of Xbar invertible", margin6 > 1e-10, float(margin6 - 1e-10),
                              "margin = min relative smallest singular value")
    s7 = np.linalg.svd(blocks.sum(axis=0), compute_uv=False)
    margin7 = s7[-1] / max(s7[0], 1e-300)
    conds["T1.7"] = Condition("T1.7", "sum of Rbar_i invertible", margin7 > 1e-10, float(margin7 - 1e-10),
                              "margin = relative smallest singular value")
    if n > 1:
        gap8 = float(lam[d] - lam[d - 1])
        conds["T1.8"] = Condition("T1.8", "lambda_(n-1)d > lambda_(n-1)d+1 (bottom-d eigengap)", gap8 > zero_thr,
                                  gap8 - zero_thr)
    else:
        conds["T1.8"] = _structural("T1.8", "bottom-d eigengap", False, "single node")
    bottom = lam[:d]
    gap9 = float(np.min(np.diff(bottom))) if d > 1 else np.inf
    conds["T1.9"] = Condition("T1.9", "d smallest eigenvalues of L_undir distinct", gap9 > zero_thr,
                              float(min(gap9, 1e300) - zero_thr))
    Lscalar = scalar_laplacian(g, weighted=False)
    normL = spectral_norm(Lscalar)
    bound10 = 2 / normL if normL > 0 else np.inf
    conds["T1.10"] = Condition("T1.10", "eps2 < 2/||L||_2", eps2 < bound10, bound10 - eps2, f"||L||_2={normL:.6g}")

    conds["T2.1"] = _structural("T2.1", "graph is quasi-strongly connected", report.quasi_strongly_connected,
                                f"centers={report.centers}")
    conds["T2.2"] = _structural("T2.2", "graph is strongly connected", report.strongly_connected)
    conds["T2.3"] = Condition("T2.3", "all R_ij orthogonal", conds["T1.2"].passed, conds["T1.2"].margin)
    conds["T2.4"] = Condition("T2.4", "transforms transitively consistent", conds["T1.3"].passed, conds["T1.3"].margin,
                              conds["T1.3"].note)
    Ldir_scalar = scalar_laplacian(g)
    mu = np.linalg.eigvals(Ldir_scalar)
    mu = mu[np.argsort(mu.real, kind="stable")]
    rest = mu[1:]
    worst5 = float(np.max(np.abs(1 - eps3 * rest))) if len(rest) else 0.0
    conds["T2.5"] = Condition("T2.5", "|1 - eps3 lambda_i(Lbar)| < 1 for the n-1 non-null eigenvalues",
                              worst5 < 1, 1 - worst5)
    weights = np.array(list(g.weights.values())) if g.num_edges else np.array([1.0])
    lo = float(weights.min()) if delta1 is None else delta1
    hi = float(weights.max()) if delta2 is None else delta2
    margin6b = min(float(weights.min()) - lo, hi - float(weights.max()))
    conds["T2.6"] = Condition("T2.6", "delta1 <= a_ij <= delta2", lo > 0 and margin6b >= 0, margin6b,
                              f"delta1={lo:.6g} delta2={hi:.6g}")

    if report.connected and not report.quasi_strongly_connected and classify(g.reversed()).quasi_strongly_connected:
        notes.append("graph is not QSC but its reverse is; the nullspace of L_dir is spanned by U_1 of the transposed collection")
    notes += sol.warnings
    return ConditionReport(conds, default_eps, default_eps, default_eps, notes)


def _quiet_gap(lam, d, thr) -> bool:
    return len(lam) > d and lam[d] - lam[d - 1] <= thr


def _silent_solve(Lu: BlockLaplacian) -> SpectralSolution:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_spectral_relaxation(Lu)


# --- gap metric and nullspace diagnostics -------------------------------------

def gap(numerator, denominator, g: DirectedGraph, T: EdgeTransformSet, rel_tol: float = 1e-12) -> float:
    """``|f1(numerator) / f1(denominator) - 1|``.

    Raises :class:`UndefinedGapError` when ``f1(denominator)`` is numerically zero,
    which happens for transitively consistent transforms.
    """
    den = objective_f1(g, T, denominator)
    total_weight = sum(g.weights.values()) * T.d
    if den <= rel_tol * max(total_weight, 1.0):
        raise UndefinedGapError(f"reference objective {den:.3e} is zero: transforms look transitively consistent")
    return abs(objective_f1(g, T, numerator) / den - 1.0)


def nullspace_containment(Ld: BlockLaplacian, C) -> float:
    """``||L_dir U_1(C)||_F / ||U_1(C)||_F``."""
    U = stack_U1(C)
    return float(np.linalg.norm(Ld.matrix @ U) / np.linalg.norm(U))


def perturb_consistent(
    g: DirectedGraph,
    T: EdgeTransformSet,
    C,
    eps: float,
    Q=None,
    node: int | None = None,
) -> EdgeTransformSet:
    """Perturb two out-edges of one node so consistency breaks but ``L_dir U_1(C) = 0`` survives.

    With ``k`` the chosen node and ``l, m`` its first two out-neighbors::

        R'_kl = C_k^{-1} (I + Q/a_kl) C_l,    R'_km = C_k^{-1} (I - Q/a_km) C_m

    so ``a_kl R'_kl C_l^{-1} + a_km R'_km C_m^{-1}`` is unchanged. The default
    ``Q`` is a scaled skew matrix (a scalar for ``d = 1``) sized so that the total
    edge-wise change is at most ``eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check(g, T)
    C = _as_collection(C, g.n, T.d)
    if not classify(g).quasi_strongly_connected:
        raise ValueError("perturbation construction needs a quasi-strongly connected graph")
    candidates = [i for i in range(g.n) if len(g.neighbors(i)) >= 2]
    if node is None:
        if not candidates:
            raise ValueError("no node has out-degree >= 2")
        node = candidates[0]
    elif node not in candidates:
        raise ValueError(f"node {node} has out-degree < 2")
    k = node
    l, m = g.neighbors(k)[:2]
    a_kl, a_km = g.weights[(k, l)], g.weights[(k, m)]
    d = T.d
    Ck_inv = np.linalg.inv(C[k])
    kappa = max(np.linalg.norm(Ck_inv, 2) * np.linalg.norm(C[l], 2), np.linalg.norm(Ck_inv, 2) * np.linalg.norm(C[m], 2))
    amin = min(a_kl, a_km)
    if Q is None:
        scale = eps * amin / (4 * kappa)
        if d == 1:
            Q = np.array([[scale]])
        else:
            Q = np.zeros((d, d))
            Q[0, 1], Q[1, 0] = scale, -scale
    else:
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (d, d):
            raise ValueError(f"Q must be {d}x{d}")
        if not np.any(Q):
            raise ValueError("Q = 0 leaves the transforms consistent")
        if np.linalg.norm(Q) >= eps * amin / 2:
            raise ValueError("||Q||_F must be below eps * min(a_kl, a_km) / 2")
    if not np.any(Q):
        raise ValueError("Q = 0 leaves the transforms consistent")
    eye = np.eye(d)
    for M in (eye + Q / a_kl, eye - Q / a_km):
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] < 1e-12 * s[0]:
            raise ValueError("I +/- Q/a is singular")
    return T.replace({
        (k, l): Ck_inv @ (eye + Q / a_kl) @ C[l],
        (k, m): Ck_inv @ (eye - Q / a_km) @ C[m],
    })


# --- transform file format ----------------------------------------------------

def format_transforms(g: DirectedGraph, T: EdgeTransformSet) -> str:
    """Header ``n d m``, then per edge ``i j a_ij`` and ``d`` rows of the matrix (1-based)."""
    _check(g, T)
    lines = [f"{g.n} {T.d} {len(T)}"]
    for (i, j), R in T.transforms.items():
        lines.append(f"{i + 1} {j + 1} {g.weights[(i, j)]!r}")
        lines += [" ".join(repr(float(x)) for x in row) for row in R]
    return "\n".join(lines) + "\n"


def parse_transforms(text: str) -> tuple[DirectedGraph, EdgeTransformSet]:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty transform file")
    n, d, m = (int(x) for x in rows[0])
    if len(rows) != 1 + m * (d + 1):
        raise ValueError(f"transform file should have {1 + m * (d + 1)} non-empty lines, found {len(rows)}")
    weights, mats = {}, {}
    pos = 1
    for _ in range(m):
        i, j = int(rows[pos][0]) - 1, int(rows[pos][1]) - 1
        weights[(i, j)] = float(rows[pos][2])
        mats[(i, j)] = np.array([[float(x) for x in r] for r in rows[pos + 1:pos + 1 + d]])
        pos += d + 1
    return DirectedGraph(n, weights), EdgeTransformSet(d, mats)


def write_transforms(g: DirectedGraph, T: EdgeTransformSet, path) -> None:
    Path(path).write_text(format_transforms(g, T))


def read_transforms(path) -> tuple[DirectedGraph, EdgeTransformSet]:
    return parse_transforms(Path(path).read_text())
