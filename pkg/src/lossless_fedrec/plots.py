"""Report figures rendered with matplotlib's Agg backend.

Figures are built on bare ``Figure`` objects (no pyplot state) and saved
without software metadata, so identical inputs give identical PNG bytes.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_DPI = 100
_METADATA = {"Software": None}


def _save(fig: Figure, path) -> str:
    FigureCanvasAgg(fig)
    fig.savefig(str(path), format="png", dpi=_DPI, metadata=_METADATA)
    return str(path)


def plot_losses(path, series: dict[str, list[float]]) -> str:
    """Training loss per epoch; one line per named run."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for name, losses in series.items():
        ax.plot(np.arange(1, len(losses) + 1), losses, marker=".", label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("BPR loss (sum)")
    if series:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_equivalence(path, report) -> str:
    """Worst relative parameter difference per epoch against the tolerance."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    epochs = [e.epoch for e in report.epochs]
    # zeros cannot sit on a log axis; draw them at the floor
    floor = 1e-18
    diffs = [max(e.max_rel_diff, floor) for e in report.epochs]
    ax.semilogy(epochs, diffs, marker="o", label="max relative difference")
    ax.axhline(report.tol, color="tab:red", linestyle="--", label=f"tolerance {report.tol:g}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative difference")
    ax.set_ylim(bottom=floor / 10)
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    return _save(fig, path)


def plot_metrics(path, reports: dict[str, object]) -> str:
    """Precision@n and Recall@n side by side for each named run."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    names = list(reports)
    x = np.arange(len(names))
    width = 0.35
    prec = [reports[k].precision_at_n for k in names]
    rec = [reports[k].recall_at_n for k in names]
    n = reports[names[0]].n if names else 0
    ax.bar(x - width / 2, prec, width, label=f"Precision@{n}")
    ax.bar(x + width / 2, rec, width, label=f"Recall@{n}")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)

