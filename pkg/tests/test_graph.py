import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lossless_fedrec.graph import (
    ExpandedSubgraph,
    GraphError,
    build_graph,
    derive_expanded_subgraph,
    sym_norm_coeff,
    sym_norm_weights,
)

from conftest import graphs


def test_fixture_degrees(fixture_graph):
    g = fixture_graph
    assert (g.num_users, g.num_items) == (3, 4)
    assert g.user_degree == (2, 2, 2)
    assert g.item_degree == (2, 1, 2, 1)
    assert g.adjacency == ((0, 1), (0, 2), (2, 3))
    assert g.item_users == ((0, 1), (0,), (1, 2), (2,))
    assert g.num_edges == 6


def test_fixture_expansion_of_middle_user(fixture_graph):
    sub = derive_expanded_subgraph(fixture_graph, 1)
    assert sub.neighbor_users == (0, 2)
    assert sub.neighbor_edges == {0: (0,), 2: (2,)}
    assert sub.exclusive_items == ()
    assert sub.shared_items == (0, 2)
    assert sub.local_users() == (0, 1, 2)
    assert sub.item_neighbors(2) == (1, 2)


def test_fixture_exclusive_items(fixture_graph):
    assert derive_expanded_subgraph(fixture_graph, 0).exclusive_items == (1,)
    assert derive_expanded_subgraph(fixture_graph, 2).exclusive_items == (3,)


def test_duplicates_dropped():
    g = build_graph([(0, 0), (0, 0), (1, 0)])
    assert g.num_edges == 2


@pytest.mark.parametrize(
    "edges, kwargs",
    [
        ([], {}),
        ([(0, 0)], {"num_users": 2}),
        ([(0, 5)], {"num_items": 3}),
        ([(-1, 0)], {}),
    ],
)
def test_bad_graphs(edges, kwargs):
    with pytest.raises(GraphError):
        build_graph(edges, **kwargs)


def test_unknown_owner(fixture_graph):
    with pytest.raises(GraphError):
        derive_expanded_subgraph(fixture_graph, 3)


def test_zero_degree_items_allowed():
    g = build_graph([(0, 0)], num_items=3)
    assert g.item_degree == (1, 0, 0)
    assert g.live_items() == (0,)


def test_norm_coeff():
    assert sym_norm_coeff(2, 2) == 0.5
    assert sym_norm_coeff(1, 3) == 1 / math.sqrt(3)
    with pytest.raises(GraphError):
        sym_norm_coeff(0, 1)


@given(st.lists(st.tuples(st.integers(1, 10**6), st.integers(1, 10**6)), min_size=1, max_size=30))
def test_vector_weights_match_scalar(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    w = sym_norm_weights(a, b)
    assert [float(x) for x in w] == [sym_norm_coeff(int(x), int(y)) for x, y in pairs]


def test_validate_rejects_inconsistent_view(fixture_graph):
    sub = derive_expanded_subgraph(fixture_graph, 1)
    broken = ExpandedSubgraph(
        owner=1,
        own_items=sub.own_items,
        exclusive_items=(0,),
        neighbor_users=sub.neighbor_users,
        neighbor_edges=sub.neighbor_edges,
        user_degrees=sub.user_degrees,
        item_degrees=sub.item_degrees,
    )
    with pytest.raises(GraphError):
        broken.validate()
    missing = ExpandedSubgraph(
        owner=1,
        own_items=sub.own_items,
        exclusive_items=(),
        neighbor_users=(0,),
        neighbor_edges={0: (0,)},
        user_degrees=sub.user_degrees,
        item_degrees=sub.item_degrees,
    )
    with pytest.raises(GraphError):
        missing.validate()


@given(graphs())
def test_expansion_properties(g):
    for u in range(g.num_users):
        sub = derive_expanded_subgraph(g, u)
        sub.validate()
        # neighbours are exactly users sharing an item
        expect = {v for i in g.adjacency[u] for v in g.item_users[i]} - {u}
        assert set(sub.neighbor_users) == expect
        # the union of an item's local users is its full neighbourhood
        for i in g.adjacency[u]:
            assert sub.item_neighbors(i) == g.item_users[i]
        # exclusive items are never shared
        assert set(sub.exclusive_items).isdisjoint(sub.shared_items)
        # neighbour relation is symmetric
        for v in sub.neighbor_users:
            assert u in derive_expanded_subgraph(g, v).neighbor_users
