"""Directed weighted graphs, connectivity classification and random generation.

Nodes are 0-based integers internally. The text format is 1-based::

    n m
    i j a_ij
    ...
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InfeasibleDensityError

__all__ = [
    "DirectedGraph",
    "ConnectivityReport",
    "classify",
    "scalar_laplacian",
    "random_graph",
    "read_graph",
    "write_graph",
    "format_graph",
    "parse_graph",
]


@dataclass(frozen=True)
class DirectedGraph:
    """Weighted directed graph without self-loops.

    ``weights`` maps each edge ``(i, j)`` to a positive weight ``a_ij``; the edge
    set is exactly its key set.
    """

    n: int
    weights: Mapping[tuple[int, int], float]
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        clean = {}
        for (i, j), a in self.weights.items():
            i, j, a = int(i), int(j), float(a)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            if not a > 0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {a}")
            clean[(i, j)] = a
        object.__setattr__(self, "weights", dict(sorted(clean.items())))
        out = [[] for _ in range(self.n)]
        inc = [[] for _ in range(self.n)]
        for i, j in self.weights:
            out[i].append(j)
            inc[j].append(i)
        object.__setattr__(self, "_out", tuple(tuple(sorted(x)) for x in out))
        object.__setattr__(self, "_in", tuple(tuple(sorted(x)) for x in inc))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], weight: float = 1.0):
        return cls(n, {(i, j): weight for i, j in edges})

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(self.weights)

    @property
    def num_edges(self) -> int:
        return len(self.weights)

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Out-neighbors N_i = {j : (i, j) in E}, sorted."""
        return self._out[i]

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        return self._in[i]

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.weights

    def weight(self, i: int, j: int) -> float:
        return self.weights.get((i, j), 0.0)

    def adjacency(self, weighted: bool = True) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for (i, j), a in self.weights.items():
            A[i, j] = a if weighted else 1.0
        return A

    def reversed(self) -> DirectedGraph:
        return DirectedGraph(self.n, {(j, i): a for (i, j), a in self.weights.items()})

    @property
    def density(self) -> float:
        if self.n < 2:
            return 0.0
        return self.num_edges / (self.n * (self.n - 1))


@dataclass(frozen=True)
class ConnectivityReport:
    connected: bool
    quasi_strongly_connected: bool
    centers: list[int]
    strongly_connected: bool
    symmetric: bool


def _reach(adj: Iterable[Iterable[int]], start: int, n: int) -> list[bool]:
    seen = [False] * n
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def classify(g: DirectedGraph) -> ConnectivityReport:
    """Classify connectivity by exact graph search."""
    n = g.n
    undirected = [set(g.neighbors(i)) | set(g.in_neighbors(i)) for i in range(n)]
    connected = all(_reach(undirected, 0, n))
    # c is a center iff every node reaches c, i.e. c reaches everything in the reversed graph
    reverse_adj = [g.in_neighbors(i) for i in range(n)]
    centers = [c for c in range(n) if all(_reach(reverse_adj, c, n))]
    symmetric = all(g.has_edge(j, i) for i, j in g.edges)
    return ConnectivityReport(
        connected=connected,
        quasi_strongly_connected=bool(centers),
        centers=centers,
        strongly_connected=len(centers) == n,
        symmetric=symmetric,
    )


def scalar_laplacian(g: DirectedGraph, weighted: bool = True) -> np.ndarray:
    """L = diag(A 1) - A."""
    A = g.adjacency(weighted)
    return np.diag(A.sum(axis=1)) - A


def random_graph(n: int, density: float, mode: str = "symmetric-connected", seed=None) -> DirectedGraph:
    """Random unit-weight graph with |E| ~= density * n(n-1) directed edges.

    ``mode`` is ``"symmetric-connected"`` (mirrored spanning tree plus mirrored
    random pairs) or ``"qsc"`` (random in-arborescence towards a random center plus
    random directed edges). ``seed`` may be anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    order = [int(v) for v in rng.permutation(n)]

    if mode in ("symmetric-connected", "symmetric"):
        target_pairs = int(round(density * n * (n - 1) / 2))
        if target_pairs < n - 1:
            raise InfeasibleDensityError(
                f"density {density} gives {target_pairs} node pairs, a spanning tree on {n} nodes needs {n - 1}"
            )
        pairs = set()
        for k in range(1, n):
            u, v = order[k], order[int(rng.integers(k))]
            pairs.add((min(u, v), max(u, v)))
        rest = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in pairs]
        extra = target_pairs - len(pairs)
        for idx in sorted(rng.choice(len(rest), size=extra, replace=False)):
            pairs.add(rest[idx])
        edges = [e for i, j in pairs for e in ((i, j), (j, i))]
    elif mode == "qsc":
        target = int(round(density * n * (n - 1)))
        if target < n - 1:
            raise InfeasibleDensityError(
                f"density {density} gives {target} edges, an arborescence on {n} nodes needs {n - 1}"
            )
        # order[0] is the center; every later node points at an earlier one
        edge_set = set()
        for k in range(1, n):
            edge_set.add((order[k], order[int(rng.integers(k))]))
        rest = [(i, j) for i in range(n) for j in range(n) if i != j and (i, j) not in edge_set]
        extra = target - len(edge_set)
        for idx in sorted(rng.choice(len(rest), size=extra, replace=False)):
            edge_set.add(rest[idx])
        edges = list(edge_set)
    else:
        raise ValueError(f"unknown graph mode {mode!r}")

    g = DirectedGraph.from_edges(n, edges)
    report = classify(g)
    if mode == "qsc":
        assert report.quasi_strongly_connected, "generator produced a non-QSC graph"
    else:
        assert report.symmetric and report.connected, "generator produced a non-symmetric or disconnected graph"
    return g


def format_graph(g: DirectedGraph) -> str:
    lines = [f"{g.n} {g.num_edges}"]
    lines += [f"{i + 1} {j + 1} {a!r}" for (i, j), a in g.weights.items()]
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> DirectedGraph:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty graph file")
    n, m = int(rows[0][0]), int(rows[0][1])
    if len(rows) - 1 != m:
        raise ValueError(f"graph header announces {m} edges, found {len(rows) - 1}")
    weights = {}
    for row in rows[1:]:
        i, j = int(row[0]) - 1, int(row[1]) - 1
        weights[(i, j)] = float(row[2]) if len(row) > 2 else 1.0
    return DirectedGraph(n, weights)


def write_graph(g: DirectedGraph, path) -> None:
    Path(path).write_text(format_graph(g))


def read_graph(path) -> DirectedGraph:
    return parse_graph(Path(path).read_text())
