"""Synchronous message-passing simulator and random instance synthesis.

Each round is a barrier: every agent publishes a snapshot of its previous-round
state, each agent receives exactly the snapshots of its out-neighbors ``N_i``,
and all agents update simultaneously (Jacobi style). Observers run after the
barrier and see the whole network; agents never do.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DegenerateProjectionError, MissingMessageError, SimulationError
from .graph import DirectedGraph, random_graph
from .ortho import project_orthogonal, random_orthogonal
from .synccore import EdgeTransformSet

__all__ = [
    "TRACE_COLUMNS",
    "ExperimentTrace",
    "Mailbox",
    "Network",
    "SynthInstance",
    "synth_instance",
]

TRACE_COLUMNS = ["run_id", "iter", "gap_R", "gap_Q", "gap_Rtilde_inv", "gap_Qtilde_inv", "fallback_count", "notes"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


@dataclass
class ExperimentTrace:
    """Per-round observations of one run.

    Rows are dicts keyed by metric name; the CSV export keeps only the schema
    columns in :data:`TRACE_COLUMNS`, other keys stay available in memory.
    """

    run_id: int = 0
    rows: list[dict[str, Any]] = field(default_factory=list)

    def append(self, row: dict[str, Any]) -> None:
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        out = []
        for row in self.rows:
            v = row.get(name)
            out.append(np.nan if v is None else v)
        return np.array(out, dtype=float)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([row["iter"] for row in self.rows], dtype=int)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.rows:
            writer.writerow([self.run_id if c == "run_id" else _fmt(row.get(c)) for c in TRACE_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def read_csv(cls, path) -> ExperimentTrace:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows, run_id = [], 0
            for rec in reader:
                run_id = int(rec["run_id"])
                row: dict[str, Any] = {"iter": int(rec["iter"])}
                for c in ("gap_R", "gap_Q", "gap_Rtilde_inv", "gap_Qtilde_inv"):
                    row[c] = float(rec[c]) if rec[c] else None
                row["fallback_count"] = int(rec["fallback_count"]) if rec["fallback_count"] else None
                row["notes"] = rec["notes"]
                rows.append(row)
        return cls(run_id, rows)


class Mailbox(Mapping):
    """Read-only view of the messages delivered to one agent in one round.

    When ``log`` is given, every sender whose message is read is added to it.
    """

    def __init__(self, messages: Mapping[int, Any], log: set | None = None):
        self._messages = dict(sorted(messages.items()))
        self._log = log

    def __getitem__(self, sender: int):
        try:
            msg = self._messages[sender]
        except KeyError:
            raise MissingMessageError(f"no message from node {sender}") from None
        if self._log is not None:
            self._log.add(sender)
        return msg

    def __iter__(self) -> Iterator[int]:
        return iter(self._messages)

    def __len__(self):
        return len(self._messages)


Observer = Callable[[int, Sequence[Any]], Mapping[str, Any]]


class Network:
    """Agents on a graph, advanced in synchronous rounds.

    Parameters
    ----------
    graph : DirectedGraph
    agents : sequence
        Agent state objects, index ``i`` belongs to node ``i``.
    publish : callable
        ``publish(agent) -> message``; the snapshot neighbors receive.
    audit : bool
        Record which senders each agent reads, per round, in ``read_log``.
    """

    def __init__(self, graph: DirectedGraph, agents: Sequence[Any], publish: Callable[[Any], Any], audit: bool = False):
        if len(agents) != graph.n:
            raise ValueError(f"{len(agents)} agents for {graph.n} nodes")
        self.graph = graph
        self.agents = list(agents)
        self.publish = publish
        self.round = 0
        self.audit = audit
        self.read_log: list[list[set[int]]] = []

    def _deliver(self, snapshots: list[Any]) -> tuple[list[Mailbox], list[set[int]] | None]:
        logs = [set() for _ in range(self.graph.n)] if self.audit else None
        boxes = []
        for i in range(self.graph.n):
            msgs = {j: snapshots[j] for j in self.graph.neighbors(i)}
            boxes.append(Mailbox(msgs, logs[i] if logs is not None else None))
        return boxes, logs

    def _observe(self, observers, trace: ExperimentTrace) -> None:
        row: dict[str, Any] = {"iter": self.round}
        for obs in observers:
            row.update(obs(self.round, self.agents))
        trace.append(row)

    def run_rounds(
        self,
        step: Callable[[Any, Mailbox], Any],
        rounds: int,
        observers: Sequence[Observer] = (),
        workers: int = 1,
        run_id: int = 0,
        record_every: int = 1,
        trace: ExperimentTrace | None = None,
        monitors: Sequence[Callable[[int, Sequence[Any]], None]] = (),
    ) -> ExperimentTrace:
        """Run ``rounds`` barrier-synchronized rounds.

        ``step(agent, mailbox) -> new_agent`` must not mutate its inputs. The
        initial state is observed before the first round; afterwards every
        ``record_every``-th round and the last one are observed. ``monitors``
        are called as ``monitor(round, agents)`` after every round (and on the
        initial state) regardless of ``record_every``; their return value is ignored.
        """
        if record_every < 1:
            raise ValueError(f"record_every must be positive, got {record_every}")
        if trace is None:
            trace = ExperimentTrace(run_id)
            self._observe(observers, trace)
            for mon in monitors:
                mon(self.round, self.agents)
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            for r in range(rounds):
                snapshots = [self.publish(a) for a in self.agents]
                boxes, logs = self._deliver(snapshots)
                target = self.round + 1

                def advance(i, boxes=boxes, target=target):
                    try:
                        return step(self.agents[i], boxes[i])
                    except SimulationError:
                        raise
                    except Exception as exc:
                        raise SimulationError(f"agent {i} failed in round {target}: {exc}", target, i) from exc

                idx = range(self.graph.n)
                new_agents = list(pool.map(advance, idx)) if pool else [advance(i) for i in idx]
                self.agents = new_agents
                self.round = target
                if logs is not None:
                    self.read_log.append([log | {i} for i, log in enumerate(logs)])
                for mon in monitors:
                    mon(self.round, self.agents)
                if self.round % record_every == 0 or r == rounds - 1:
                    self._observe(observers, trace)
        finally:
            if pool:
                pool.shutdown()
        return trace


# --- instance synthesis -------------------------------------------------------

@dataclass
class SynthInstance:
    graph: DirectedGraph
    ground_truth: np.ndarray
    transforms: EdgeTransformSet
    noise_sigma: float
    seed: Any
    mode: str = "symmetric-connected"
    density: float = 1.0


def synth_instance(n: int, d: int, density: float, mode: str = "symmetric-connected",
                   noise_sigma: float = 0.2, seed=None) -> SynthInstance:
    """Random synchronization instance.

    Ground-truth ``R_i`` are Haar on O(d); each edge gets
    ``R_ij = Pr_O(d)(R_i^T R_j + N)`` with i.i.d. N(0, noise_sigma^2) entries.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    graph_ss, truth_ss, noise_ss = ss.spawn(3)
    g = random_graph(n, density, mode, graph_ss)
    truth_rng = np.random.default_rng(truth_ss)
    truth = np.array([random_orthogonal(d, truth_rng) for _ in range(n)])
    noise_rng = np.random.default_rng(noise_ss)
    mats = {}
    for i, j in g.edges:
        clean = truth[i].T @ truth[j]
        for attempt in range(2):
            noisy = clean + noise_sigma * noise_rng.standard_normal((d, d))
            try:
                mats[(i, j)] = project_orthogonal(noisy)
                break
            except DegenerateProjectionError:
                if attempt == 1:
                    raise
    return SynthInstance(g, truth, EdgeTransformSet(d, mats), noise_sigma, seed, mode, density)
