"""MovieLens 100K ``u1.base`` / ``u1.test`` ingestion.

Ratings of 4 or 5 become positive interactions. Raw ids are remapped to
dense ids over the users and items that keep at least one training
positive; test positives outside that range are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..graph import InteractionGraph, build_graph


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    raw_user: int
    raw_item: int
    rating: int
    timestamp: int


def load_movielens(path) -> list[RatingRecord]:
    """Parse a tab-separated ``user item rating timestamp`` file."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                user, item, rating, ts = (int(p) for p in parts)
                if not 1 <= rating <= 5:
                    raise ValueError(f"rating {rating} outside 1..5")
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed line ({exc})") from None
            records.append(RatingRecord(user, item, rating, ts))
    return records


def load_split(directory, split: str = "u1") -> tuple[list[RatingRecord], list[RatingRecord]]:
    directory = Path(directory)
    return (
        load_movielens(directory / f"{split}.base"),
        load_movielens(directory / f"{split}.test"),
    )


class IdMap:
    """Bijection between raw dataset ids and dense ids (ascending raw order)."""

    def __init__(self, raw_ids: Iterable[int]):
        self.inverse = tuple(sorted(set(raw_ids)))
        self.forward = {raw: dense for dense, raw in enumerate(self.inverse)}

    def __len__(self) -> int:
        return len(self.inverse)

    def __contains__(self, raw: int) -> bool:
        return raw in self.forward

    def dense(self, raw: int) -> int:
        return self.forward[raw]

    def raw(self, dense: int) -> int:
        return self.inverse[dense]


@dataclass(frozen=True)
class PositiveData:
    edges: tuple[tuple[int, int], ...]
    users: IdMap
    items: IdMap

    def graph(self) -> InteractionGraph:
        return build_graph(self.edges, len(self.users), len(self.items))


def filter_positive(records: Iterable[RatingRecord], threshold: int = 4) -> PositiveData:
    """Keep ratings ``>= threshold`` and remap ids densely."""
    kept = sorted({(r.raw_user, r.raw_item) for r in records if r.rating >= threshold})
    users = IdMap(u for u, _ in kept)
    items = IdMap(i for _, i in kept)
    edges = tuple((users.dense(u), items.dense(i)) for u, i in kept)
    return PositiveData(edges, users, items)


def held_out_positives(
    records: Iterable[RatingRecord], train: PositiveData, threshold: int = 4
) -> dict[int, set[int]]:
    """Dense test positives per user, restricted to users and items seen in training."""
    out: dict[int, set[int]] = {}
    for r in records:
        if r.rating >= threshold and r.raw_user in train.users and r.raw_item in train.items:
            out.setdefault(train.users.dense(r.raw_user), set()).add(train.items.dense(r.raw_item))
    return out


@dataclass(frozen=True)
class DatasetStats:
    base_records: int
    test_records: int
    users: int
    items: int
    density_percent: float


def dataset_stats(base: list[RatingRecord], test: list[RatingRecord]) -> DatasetStats:
    """Counts over the union of both files; density of the training file before filtering."""
    users = {r.raw_user for r in base} | {r.raw_user for r in test}
    items = {r.raw_item for r in base} | {r.raw_item for r in test}
    density = 100.0 * len(base) / (len(users) * len(items)) if users and items else 0.0
    return DatasetStats(len(base), len(test), len(users), len(items), density)
