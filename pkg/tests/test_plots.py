import numpy as np

from lossless_fedrec.metrics import compare_runs, precision_recall_at_n
from lossless_fedrec.plots import plot_equivalence, plot_losses, plot_metrics
from lossless_fedrec.reference import ParamSnapshot

PNG = b"\x89PNG\r\n\x1a\n"


def render_all(directory):
    snaps = [ParamSnapshot(e, np.full((2, 2), e + 1.0), np.ones((2, 2))) for e in range(3)]
    rep = compare_runs(snaps, snaps, 1e-9)
    ev = precision_recall_at_n([[0, 1]], [{1}], 2)
    return [
        plot_losses(directory / "loss.png", {"a": [3.0, 2.0, 1.5], "b": [3.0, 2.1, 1.4]}),
        plot_equivalence(directory / "eq.png", rep),
        plot_metrics(directory / "m.png", {"federated": ev, "centralized": ev}),
    ]


def test_figures_are_png_and_reproducible(tmp_path):
    first = render_all(tmp_path)
    blobs = [open(p, "rb").read() for p in first]
    assert all(b.startswith(PNG) for b in blobs)
    (tmp_path / "again").mkdir()
    second = render_all(tmp_path / "again")
    assert [open(p, "rb").read() for p in second] == blobs
