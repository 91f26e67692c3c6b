import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expanderseq.grower import graph_at, initial_graph
from expanderseq.multigraph import (
    WeightedMultigraph,
    adjacency_matrix,
    edge_key,
    expansion_cost,
    graph_from_text,
    graph_to_text,
    graphs_equal,
    vertex_order,
    weighted_degree,
)
from expanderseq.names import VertexName


def k4_doubled():
    return initial_graph(6)


def test_rejects_bad_degree_target():
    with pytest.raises(ValueError):
        WeightedMultigraph(5, [VertexName(0)], {})
    with pytest.raises(ValueError):
        WeightedMultigraph(4, [VertexName(0)], {})


def test_rejects_self_loop_and_bad_weight():
    a, b = VertexName(0), VertexName(1)
    with pytest.raises(ValueError):
        edge_key(a, a)
    with pytest.raises(ValueError):
        WeightedMultigraph(6, [a, b], {(a, b): 0})


def test_weighted_degree_doubled_k4():
    g = k4_doubled()
    for v in g.vertices:
        assert weighted_degree(g, v) == 6


def test_weighted_degree_single_edge():
    a, b = VertexName(0), VertexName(1)
    g = WeightedMultigraph(6, [a, b], {edge_key(a, b): 5})
    assert weighted_degree(g, a) == 5


def test_weighted_degree_unknown_vertex():
    g = k4_doubled()
    with pytest.raises(KeyError, match="9:"):
        weighted_degree(g, VertexName(9))


def test_degrees_after_one_split():
    g = graph_at(6, 5, 1)
    assert all(weighted_degree(g, v) == 6 for v in g.vertices)


def test_adjacency_matrix_doubled_k4():
    g = k4_doubled()
    a = adjacency_matrix(g)
    assert a.shape == (4, 4)
    assert (a == 2 * (np.ones((4, 4)) - np.eye(4))).all()


def test_adjacency_zero_matrix():
    names = [VertexName(i) for i in range(3)]
    g = WeightedMultigraph(6, names, {})
    assert (adjacency_matrix(g) == 0).all()


def test_adjacency_split_pair_weight():
    g = graph_at(6, 5, 1)
    assert g.weight(VertexName(0, (0,)), VertexName(0, (1,))) == 3


def test_adjacency_row_sums_are_degrees():
    g = graph_at(6, 7, 1)
    a = adjacency_matrix(g)
    order = vertex_order(g)
    for i, v in enumerate(order):
        assert a[i].sum() == weighted_degree(g, v)


def test_adjacency_rejects_partial_order():
    g = k4_doubled()
    with pytest.raises(ValueError):
        adjacency_matrix(g, order=vertex_order(g)[:-1])


def test_expansion_cost_identity():
    g = graph_at(6, 6, 1)
    assert expansion_cost(g, g) == 0


def test_expansion_cost_first_split_is_nine():
    assert expansion_cost(graph_at(6, 4, 1), graph_at(6, 5, 1)) == 9


def test_expansion_cost_last_split_is_five_halves_d():
    assert expansion_cost(graph_at(6, 7, 1), graph_at(6, 8, 1)) == 15


def test_graphs_equal():
    g = graph_at(6, 5, 1)
    assert graphs_equal(g, g)
    assert not graphs_equal(graph_at(6, 4, 1), g)


simple_names = st.builds(
    VertexName,
    base=st.integers(min_value=0, max_value=3),
    bits=st.sampled_from([(), (1,), (0, 1), (1, 1)]),
)


@st.composite
def small_graphs(draw):
    names = draw(st.sets(simple_names, min_size=2, max_size=6))
    names = sorted(names, key=lambda v: v.key())
    weights = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            w = draw(st.integers(min_value=0, max_value=3))
            if w:
                weights[edge_key(names[i], names[j])] = w
    return WeightedMultigraph(6, names, weights)


@given(small_graphs(), small_graphs(), small_graphs())
def test_expansion_cost_metric_axioms(g1, g2, g3):
    # names above carry no trailing zeros, so identity matching is the
    # literal weight map and the metric axioms hold exactly
    assert expansion_cost(g1, g2) >= 0
    assert expansion_cost(g1, g2) == expansion_cost(g2, g1)
    same_vertices = g1.vertices == g2.vertices
    if same_vertices:
        assert (expansion_cost(g1, g2) == 0) == graphs_equal(g1, g2)
    assert expansion_cost(g1, g3) <= expansion_cost(g1, g2) + expansion_cost(g2, g3)


def test_serialization_roundtrip_sequence_graphs():
    for n in range(4, 10):
        g = graph_at(6, n, 1)
        assert graphs_equal(graph_from_text(graph_to_text(g)), g)


@given(small_graphs())
def test_serialization_roundtrip_random(g):
    if any(not g.neighbors(v) for v in g.vertices):
        return  # the format cannot carry isolated vertices
    assert graphs_equal(graph_from_text(graph_to_text(g)), g)


def test_serialization_is_canonical_and_lf():
    from expanderseq.names import parse_name

    text = graph_to_text(graph_at(6, 5, 1))
    assert text.endswith("\n") and "\r" not in text
    lines = text.splitlines()
    assert lines[0] == "6 5"

    def line_key(s):
        a, b, _ = s.split()
        return (parse_name(a).key(), parse_name(b).key())

    assert lines[1:] == sorted(lines[1:], key=line_key)


def test_parse_rejects_malformed():
    with pytest.raises(ValueError):
        graph_from_text("6\n")
    with pytest.raises(ValueError):
        graph_from_text("6 2\n0: 1: x\n")
    with pytest.raises(ValueError):
        graph_from_text("6 3\n0: 1: 2\n")  # vertex count mismatch
    with pytest.raises(ValueError):
        graph_from_text("6 2\n0: 1: 2\n0: 1: 1\n")  # duplicate edge


def test_write_rejects_isolated_vertex():
    names = [VertexName(0), VertexName(1), VertexName(2)]
    g = WeightedMultigraph(6, names, {edge_key(names[0], names[1]): 1})
    with pytest.raises(ValueError):
        io_buf = io.StringIO()
        from expanderseq.multigraph import write_graph

        write_graph(g, io_buf)
