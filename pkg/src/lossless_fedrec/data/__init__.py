"""Dataset ingestion: MovieLens 100K split files, edge lists, the worked example."""

from .fixture import fixture_edge_path, fixture_example, load_edge_file
from .movielens import (
    DataError,
    IdMap,
    PositiveData,
    RatingRecord,
    dataset_stats,
    filter_positive,
    load_movielens,
    load_split,
    held_out_positives,
)

__all__ = [
    "DataError",
    "IdMap",
    "PositiveData",
    "RatingRecord",
    "dataset_stats",
    "filter_positive",
    "fixture_edge_path",
    "fixture_example",
    "load_edge_file",
    "load_movielens",
    "load_split",
    "held_out_positives",
]
