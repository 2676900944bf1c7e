"""The three-user, four-item worked example.

Edges: u0-i0, u0-i1, u1-i0, u1-i2, u2-i2, u2-i3. Item i0 is shared by u0 and
u1, i3 belongs to u2 alone, and u1 neighbours both u0 and u2, so u1's user
gradient is assembled from three parts.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..graph import InteractionGraph, build_graph

FIXTURE_EDGES = ((0, 0), (0, 1), (1, 0), (1, 2), (2, 2), (2, 3))


def fixture_example() -> InteractionGraph:
    return build_graph(FIXTURE_EDGES)


def fixture_edge_path() -> Path:
    return Path(str(resources.files(__package__).joinpath("fixture_edges.tsv")))


def load_edge_file(path) -> InteractionGraph:
    """Graph from a whitespace-separated ``user item`` file (``#`` comments allowed)."""
    from .movielens import DataError

    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise DataError(f"{path}:{lineno}: expected 'user item', got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    return build_graph(edges)
