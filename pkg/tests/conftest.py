import numpy as np
import pytest

from orthosync.graph import DirectedGraph
from orthosync.ortho import random_orthogonal
from orthosync.synccore import EdgeTransformSet

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_invertible(d, rng, lo=0.5, hi=2.0):
    """Well-conditioned invertible matrix U diag(s) V with s in [lo, hi]."""
    return random_orthogonal(d, rng) @ np.diag(rng.uniform(lo, hi, d)) @ random_orthogonal(d, rng)


def scalar_instance(n, edges, values, weights=None):
    """d = 1 instance from a list of edges and scalar transforms."""
    weights = weights or [1.0] * len(edges)
    g = DirectedGraph(n, dict(zip(edges, weights)))
    T = EdgeTransformSet(1, {e: np.array([[v]]) for e, v in zip(edges, values)})
    return g, T
