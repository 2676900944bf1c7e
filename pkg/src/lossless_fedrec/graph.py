"""Bipartite user-item topology and the per-client expanded subgraph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionGraph:
    """Global interaction graph with dense user and item ids.

    ``adjacency[u]`` is the ascending tuple of items user ``u`` interacted
    with; ``item_users[i]`` is its transpose.
    """

    num_users: int
    num_items: int
    adjacency: tuple[tuple[int, ...], ...]
    item_users: tuple[tuple[int, ...], ...] = field(repr=False)
    user_degree: tuple[int, ...] = field(repr=False)
    item_degree: tuple[int, ...] = field(repr=False)

    @property
    def num_edges(self) -> int:
        return sum(self.user_degree)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, i) for u, items in enumerate(self.adjacency) for i in items]

    def live_items(self) -> tuple[int, ...]:
        """Items with at least one interaction, ascending."""
        return tuple(i for i, deg in enumerate(self.item_degree) if deg > 0)


def build_graph(
    edges: Iterable[tuple[int, int]],
    num_users: int | None = None,
    num_items: int | None = None,
) -> InteractionGraph:
    """Build a graph from ``(user, item)`` pairs; duplicates are dropped.

    Every user in ``range(num_users)`` must have at least one edge. Items
    without edges are allowed and keep degree 0.
    """
    pairs = sorted(set((int(u), int(i)) for u, i in edges))
    if not pairs:
        raise GraphError("empty graph")
    if pairs[0][0] < 0 or min(i for _, i in pairs) < 0:
        raise GraphError("negative node id")
    max_user = max(u for u, _ in pairs)
    max_item = max(i for _, i in pairs)
    num_users = max_user + 1 if num_users is None else num_users
    num_items = max_item + 1 if num_items is None else num_items
    if max_user >= num_users or max_item >= num_items:
        raise GraphError("node id out of range")

    adjacency: list[list[int]] = [[] for _ in range(num_users)]
    item_users: list[list[int]] = [[] for _ in range(num_items)]
    for u, i in pairs:
        adjacency[u].append(i)
        item_users[i].append(u)
    isolated = [u for u, items in enumerate(adjacency) if not items]
    if isolated:
        raise GraphError(f"users without interactions: {isolated[:5]}")
    return InteractionGraph(
        num_users=num_users,
        num_items=num_items,
        adjacency=tuple(tuple(a) for a in adjacency),
        item_users=tuple(tuple(a) for a in item_users),
        user_degree=tuple(len(a) for a in adjacency),
        item_degree=tuple(len(a) for a in item_users),
    )


@dataclass(frozen=True)
class ExpandedSubgraph:
    """What client ``owner`` knows about the graph after expansion.

    ``neighbor_edges`` maps each neighbouring user to the items it shares
    with the owner. ``user_degrees`` covers the owner and all neighbours,
    ``item_degrees`` covers the owner's items; both are global degrees.
    """

    owner: int
    own_items: tuple[int, ...]
    exclusive_items: tuple[int, ...]
    neighbor_users: tuple[int, ...]
    neighbor_edges: Mapping[int, tuple[int, ...]]
    user_degrees: Mapping[int, int]
    item_degrees: Mapping[int, int]

    @property
    def shared_items(self) -> tuple[int, ...]:
        excl = set(self.exclusive_items)
        return tuple(i for i in self.own_items if i not in excl)

    def local_users(self) -> tuple[int, ...]:
        """Owner and neighbours, ascending."""
        return tuple(sorted((self.owner, *self.neighbor_users)))

    @cached_property
    def _users_by_item(self) -> dict[int, tuple[int, ...]]:
        users: dict[int, list[int]] = {i: [self.owner] for i in self.own_items}
        for v, common in self.neighbor_edges.items():
            for i in common:
                users.setdefault(i, [self.owner]).append(v)
        return {i: tuple(sorted(us)) for i, us in users.items()}

    def item_neighbors(self, item: int) -> tuple[int, ...]:
        """All users of own item ``item`` as seen locally, ascending."""
        return self._users_by_item[item]

    def validate(self) -> None:
        own = set(self.own_items)
        if not set(self.exclusive_items) <= own:
            raise GraphError("exclusive items must be owned")
        for v, common in self.neighbor_edges.items():
            if not common or not set(common) <= own:
                raise GraphError(f"bad common-item list for neighbour {v}")
        exclusive = set(self.exclusive_items)
        for i in self.own_items:
            if (self.item_degrees[i] == 1) != (i in exclusive):
                raise GraphError(f"exclusivity of item {i} disagrees with its degree")
            if self.item_degrees[i] != len(self.item_neighbors(i)):
                raise GraphError(f"neighbourhood of item {i} is incomplete")


def derive_expanded_subgraph(graph: InteractionGraph, owner: int) -> ExpandedSubgraph:
    """All-knowing construction of ``owner``'s expanded subgraph."""
    if not 0 <= owner < graph.num_users:
        raise GraphError(f"unknown user {owner}")
    own = graph.adjacency[owner]
    edges: dict[int, set[int]] = {}
    for i in own:
        for v in graph.item_users[i]:
            if v != owner:
                edges.setdefault(v, set()).add(i)
    neighbors = tuple(sorted(edges))
    return ExpandedSubgraph(
        owner=owner,
        own_items=own,
        exclusive_items=tuple(i for i in own if graph.item_degree[i] == 1),
        neighbor_users=neighbors,
        neighbor_edges={v: tuple(sorted(edges[v])) for v in neighbors},
        user_degrees={v: graph.user_degree[v] for v in sorted((owner, *neighbors))},
        item_degrees={i: graph.item_degree[i] for i in own},
    )


def sym_norm_coeff(deg_a: int, deg_b: int) -> float:
    """LightGCN edge weight ``1/sqrt(deg_a * deg_b)``."""
    if deg_a < 1 or deg_b < 1:
        raise GraphError("isolated node")
    return 1.0 / math.sqrt(deg_a * deg_b)


def sym_norm_weights(deg_a: np.ndarray, deg_b: np.ndarray) -> np.ndarray:
    """Vectorised :func:`sym_norm_coeff`; rounds identically to the scalar form."""
    deg_a = np.asarray(deg_a, dtype=np.int64)
    deg_b = np.asarray(deg_b, dtype=np.int64)
    if deg_a.size and (deg_a.min() < 1 or deg_b.min() < 1):
        raise GraphError("isolated node")
    return 1.0 / np.sqrt((deg_a * deg_b).astype(np.float64))
