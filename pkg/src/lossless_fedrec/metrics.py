"""Top-N accuracy metrics and the federated-vs-centralized equivalence check.

Both reports serialize to line-oriented ``key=value`` text and to JSON;
the JSON layout is described in the README.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

REL_FLOOR = 1e-12


def _by_user(values) -> dict[int, object]:
    if isinstance(values, Mapping):
        return {int(u): v for u, v in values.items()}
    return dict(enumerate(values))


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class UserScore:
    user: int
    hits: int
    relevant: int
    precision: float
    recall: float


@dataclass(frozen=True)
class EvalReport:
    n: int
    precision_at_n: float
    recall_at_n: float
    per_user: tuple[UserScore, ...] = ()

    @property
    def evaluated_users(self) -> int:
        return len(self.per_user)

    def to_dict(self) -> dict:
        return {
            "kind": "eval",
            "n": self.n,
            "precision_at_n": self.precision_at_n,
            "recall_at_n": self.recall_at_n,
            "evaluated_users": self.evaluated_users,
            "per_user": [
                {"user": s.user, "hits": s.hits, "relevant": s.relevant, "precision": s.precision, "recall": s.recall}
                for s in self.per_user
            ],
        }

    def to_text(self) -> str:
        lines = [
            "kind=eval",
            f"n={self.n}",
            f"precision_at_n={_fmt(self.precision_at_n)}",
            f"recall_at_n={_fmt(self.recall_at_n)}",
            f"evaluated_users={self.evaluated_users}",
        ]
        return "\n".join(lines) + "\n"


def precision_recall_at_n(recs, test_pos, n: int) -> EvalReport:
    """Mean Precision@n and Recall@n over users with at least one held-out item.

    ``recs`` and ``test_pos`` are indexed by user (a sequence or a mapping).
    Only the first ``n`` recommendations count; precision always divides
    by ``n``. Means use exact summation in ascending user order, so any
    relabelling of users gives the same numbers.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    recs = _by_user(recs)
    test_pos = _by_user(test_pos)
    scores = []
    for u in sorted(test_pos):
        relevant = set(int(i) for i in test_pos[u])
        if not relevant:
            continue
        top = [int(i) for i in recs.get(u, ())][:n]
        hits = len(relevant.intersection(top))
        scores.append(UserScore(u, hits, len(relevant), hits / n, hits / len(relevant)))
    if not scores:
        return EvalReport(n, 0.0, 0.0, ())
    precision = math.fsum(s.precision for s in scores) / len(scores)
    recall = math.fsum(s.recall for s in scores) / len(scores)
    return EvalReport(n, precision, recall, tuple(scores))


@dataclass(frozen=True)
class EpochDiff:
    """Worst relative difference in one epoch and where it occurred."""

    epoch: int
    max_rel_diff: float
    table: str  # "users" or "items"
    node: int
    component: int


@dataclass(frozen=True)
class EquivalenceReport:
    tol: float
    epochs: tuple[EpochDiff, ...]
    rankings_identical: bool | None  # None when no rankings were compared
    first_ranking_mismatch: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def max_rel_diff(self) -> float:
        return max((e.max_rel_diff for e in self.epochs), default=0.0)

    @property
    def worst(self) -> EpochDiff | None:
        if not self.epochs:
            return None
        return max(self.epochs, key=lambda e: (e.max_rel_diff, -e.epoch))

    @property
    def failing_epochs(self) -> tuple[int, ...]:
        return tuple(e.epoch for e in self.epochs if not e.max_rel_diff <= self.tol)

    @property
    def passed(self) -> bool:
        return not self.failing_epochs and self.rankings_identical is not False

    def to_dict(self) -> dict:
        worst = self.worst
        return {
            "kind": "equivalence",
            "tol": self.tol,
            "passed": self.passed,
            "max_rel_diff": self.max_rel_diff,
            "rankings_identical": self.rankings_identical,
            "first_ranking_mismatch": self.first_ranking_mismatch,
            "worst": None
            if worst is None
            else {"epoch": worst.epoch, "table": worst.table, "node": worst.node, "component": worst.component},
            "epochs": [
                {"epoch": e.epoch, "max_rel_diff": e.max_rel_diff, "table": e.table, "node": e.node, "component": e.component}
                for e in self.epochs
            ],
            **self.extra,
        }

    def to_text(self) -> str:
        worst = self.worst
        ranks = "not-compared" if self.rankings_identical is None else str(self.rankings_identical).lower()
        lines = [
            "kind=equivalence",
            f"passed={str(self.passed).lower()}",
            f"tol={_fmt(self.tol)}",
            f"max_rel_diff={_fmt(self.max_rel_diff)}",
            f"rankings_identical={ranks}",
        ]
        if worst is not None:
            lines.append(f"worst={worst.table}[{worst.node}][{worst.component}]@epoch{worst.epoch}")
        if self.first_ranking_mismatch is not None:
            lines.append(f"first_ranking_mismatch_user={self.first_ranking_mismatch}")
        for key, value in self.extra.items():
            lines.append(f"{key}={_fmt(value) if isinstance(value, float) else value}")
        lines.extend(f"epoch{e.epoch}_max_rel_diff={_fmt(e.max_rel_diff)}" for e in self.epochs)
        return "\n".join(lines) + "\n"


def relative_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``|a - b| / (min(|a|, |b|) + 1e-12)``; symmetric in its arguments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / (np.minimum(np.abs(a), np.abs(b)) + REL_FLOOR)


def _worst(epoch: int, tables) -> EpochDiff:
    best = EpochDiff(epoch, 0.0, "users", 0, 0)
    for name, a, b in tables:
        if a.size == 0:
            continue
        rel = relative_difference(a, b)
        flat = int(np.argmax(np.where(np.isnan(rel), np.inf, rel)))
        value = float(rel.flat[flat])
        if np.isnan(value):
            value = math.inf
        if value > best.max_rel_diff:
            node, comp = np.unravel_index(flat, rel.shape)
            best = EpochDiff(epoch, value, name, int(node), int(comp))
    return best


def compare_runs(
    fed_snapshots: Sequence,
    central_snapshots: Sequence,
    tol: float,
    fed_rankings=None,
    central_rankings=None,
) -> EquivalenceReport:
    """Per-epoch worst relative parameter difference plus ranking identity.

    Snapshots are objects with ``epoch``, ``users`` and ``items``. Passing
    requires every epoch within ``tol`` and, when both ranking lists are
    given, identical top-n lists for every user.
    """
    if len(fed_snapshots) != len(central_snapshots):
        raise ValueError(
            f"snapshot count mismatch: {len(fed_snapshots)} vs {len(central_snapshots)}"
        )
    epochs = []
    for fs, cs in zip(fed_snapshots, central_snapshots):
        if fs.epoch != cs.epoch:
            raise ValueError(f"epoch mismatch: {fs.epoch} vs {cs.epoch}")
        for name in ("users", "items"):
            if np.shape(getattr(fs, name)) != np.shape(getattr(cs, name)):
                raise ValueError(f"{name} shape mismatch at epoch {fs.epoch}")
        epochs.append(_worst(fs.epoch, (("users", fs.users, cs.users), ("items", fs.items, cs.items))))

    identical = None
    mismatch = None
    if fed_rankings is not None and central_rankings is not None:
        fed_r, cen_r = _by_user(fed_rankings), _by_user(central_rankings)
        users = sorted(set(fed_r) | set(cen_r))
        for u in users:
            if [int(i) for i in fed_r.get(u, ())] != [int(i) for i in cen_r.get(u, ())]:
                mismatch = u
                break
        identical = mismatch is None
    return EquivalenceReport(float(tol), tuple(epochs), identical, mismatch)


def write_report(report, stem) -> tuple[str, str]:
    """Write ``<stem>.txt`` and ``<stem>.json``; returns both paths."""
    stem = str(stem)
    txt, js = stem + ".txt", stem + ".json"
    with open(txt, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    with open(js, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return txt, js
