import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthosync.errors import InfeasibleDensityError
from orthosync.graph import (
    DirectedGraph,
    classify,
    format_graph,
    parse_graph,
    random_graph,
    read_graph,
    scalar_laplacian,
    write_graph,
)


def closure(n, edges):
    reach = np.eye(n, dtype=bool)
    for i, j in edges:
        reach[i, j] = True
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def brute_classify(n, edges):
    reach = closure(n, edges)
    und = closure(n, list(edges) + [(j, i) for i, j in edges])
    centers = [c for c in range(n) if reach[:, c].all()]
    return dict(
        connected=bool(und.all()),
        quasi_strongly_connected=bool(centers),
        centers=centers,
        strongly_connected=bool(reach.all()),
        symmetric=all((j, i) in set(edges) for i, j in edges),
    )


@st.composite
def small_graphs(draw):
    n = draw(st.integers(1, 6))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return n, edges


@settings(max_examples=300, deadline=None)
@given(small_graphs())
def test_classify_matches_transitive_closure(case):
    n, edges = case
    rep = classify(DirectedGraph.from_edges(n, edges))
    assert vars(rep) == brute_classify(n, edges)
    assert not rep.strongly_connected or rep.quasi_strongly_connected
    assert not rep.quasi_strongly_connected or rep.connected


def test_classify_chain():
    rep = classify(DirectedGraph.from_edges(3, [(0, 1), (1, 2)]))
    assert rep.connected and rep.quasi_strongly_connected
    assert rep.centers == [2]
    assert not rep.strongly_connected and not rep.symmetric


def test_classify_cycle():
    rep = classify(DirectedGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)]))
    assert rep.strongly_connected and rep.centers == [0, 1, 2]


def test_classify_isolated_pair():
    rep = classify(DirectedGraph(2, {}))
    assert not rep.connected and not rep.quasi_strongly_connected


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        DirectedGraph.from_edges(2, [(0, 0)])
    with pytest.raises(ValueError):
        DirectedGraph.from_edges(2, [(0, 2)])
    with pytest.raises(ValueError):
        DirectedGraph(2, {(0, 1): 0.0})
    with pytest.raises(ValueError):
        DirectedGraph(0, {})


def test_neighbors_are_out_neighbors():
    g = DirectedGraph.from_edges(3, [(0, 1), (0, 2), (2, 1)])
    assert g.neighbors(0) == (1, 2)
    assert g.neighbors(1) == ()
    assert g.in_neighbors(1) == (0, 2)
    assert g.reversed().neighbors(1) == (0, 2)


@pytest.mark.parametrize(
    "edges, expected",
    [
        ([(0, 1)], [[1, -1], [0, 0]]),
        ([(0, 1), (1, 0)], [[1, -1], [-1, 1]]),
    ],
)
def test_scalar_laplacian_small(edges, expected):
    np.testing.assert_array_equal(scalar_laplacian(DirectedGraph.from_edges(2, edges)), expected)


def test_scalar_laplacian_cycle():
    L = scalar_laplacian(DirectedGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)]))
    np.testing.assert_array_equal(L, [[1, -1, 0], [0, 1, -1], [-1, 0, 1]])


def test_scalar_laplacian_weighted_rows_sum_to_zero(rng):
    g = random_graph(7, 0.6, "qsc", seed=3)
    g = DirectedGraph(7, {e: float(rng.uniform(0.1, 3)) for e in g.edges})
    L = scalar_laplacian(g)
    # exact for integer weights; float weights only up to summation order
    assert np.all(scalar_laplacian(g, weighted=False) @ np.ones(7) == 0)
    assert np.max(np.abs(L @ np.ones(7))) <= 1e-14 * np.max(np.abs(L))


@pytest.mark.parametrize("mode", ["symmetric-connected", "qsc"])
@pytest.mark.parametrize("density", [0.3, 0.5, 0.9, 1.0])
def test_random_graph_mode_and_density(mode, density):
    for seed in range(10):
        g = random_graph(10, density, mode, seed)
        rep = classify(g)
        if mode == "qsc":
            assert rep.quasi_strongly_connected
            assert g.num_edges == round(density * 90)
        else:
            assert rep.symmetric and rep.connected
            assert g.num_edges == 2 * round(density * 45)


def test_random_graph_deterministic():
    a = random_graph(9, 0.5, "qsc", seed=42)
    b = random_graph(9, 0.5, "qsc", seed=42)
    c = random_graph(9, 0.5, "qsc", seed=43)
    assert a == b
    assert a != c


def test_random_graph_two_nodes_complete():
    g = random_graph(2, 1.0, "symmetric-connected", seed=0)
    assert set(g.edges) == {(0, 1), (1, 0)}


def test_random_graph_infeasible_density():
    with pytest.raises(InfeasibleDensityError):
        random_graph(10, 0.05, "symmetric-connected", seed=0)
    with pytest.raises(InfeasibleDensityError):
        random_graph(10, 0.05, "qsc", seed=0)
    with pytest.raises(ValueError):
        random_graph(5, 0.5, "tree", seed=0)


def test_qsc_generator_is_usually_asymmetric():
    assert sum(not classify(random_graph(8, 0.5, "qsc", s)).symmetric for s in range(20)) >= 18


def test_graph_text_roundtrip(tmp_path, rng):
    g = random_graph(6, 0.5, "qsc", seed=1)
    g = DirectedGraph(6, {e: float(rng.uniform(0.1, 5)) for e in g.edges})
    assert parse_graph(format_graph(g)) == g
    write_graph(g, tmp_path / "g.txt")
    assert read_graph(tmp_path / "g.txt") == g
    first = format_graph(g).splitlines()[0]
    assert first == f"6 {g.num_edges}"


def test_parse_graph_is_one_based_and_defaults_weight():
    g = parse_graph("3 2\n1 2\n3 1 2.5\n")
    assert g.weights == {(0, 1): 1.0, (2, 0): 2.5}
    with pytest.raises(ValueError):
        parse_graph("3 2\n1 2 1\n")


def test_density_property():
    g = DirectedGraph.from_edges(3, list(itertools.permutations(range(3), 2)))
    assert g.density == 1.0
