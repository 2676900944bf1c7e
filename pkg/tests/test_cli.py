import json

import pytest

from lossless_fedrec.cli import RunConfig, UsageError, main, parse_config_file

from conftest import synthetic_split

SMALL = ["--epochs", "3", "--dim", "4", "--layers", "2"]


def run(out, *args):
    return main([*args, "--out", str(out)])


def test_compare_fixture_passes(tmp_path, capsys):
    assert run(tmp_path, "compare", "--epochs", "10", "--dim", "8") == 0
    text = (tmp_path / "equivalence.txt").read_text()
    assert "passed=true" in text and "rankings_identical=true" in text
    for name in ("equivalence.png", "loss.png", "transcript.log", "federated_snapshots.bin", "centralized_recommendations.json"):
        assert (tmp_path / name).exists()
    assert "passed=true" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["train-federated", "train-centralized"])
def test_train_outputs(tmp_path, command):
    assert run(tmp_path, command, *SMALL) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["users"] == 3 and len(report["losses"]) == 3
    assert len(json.loads((tmp_path / "recommendations.json").read_text())["recommendations"]) == 3


def test_rerun_is_byte_identical(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(a, "train-federated", *SMALL) == 0
    assert run(b, "train-federated", *SMALL) == 0
    assert run(c, "train-federated", *SMALL, "--threads", "3") == 0
    for name in ("snapshots.bin", "final_embeddings.bin", "recommendations.json", "transcript.log", "report.json", "loss.png"):
        first = (a / name).read_bytes()
        assert (b / name).read_bytes() == first, name
        assert (c / name).read_bytes() == first, name


def test_socket_transport_matches(tmp_path):
    assert run(tmp_path / "a", "train-federated", *SMALL) == 0
    assert run(tmp_path / "b", "train-federated", *SMALL, "--transport", "socket") == 0
    assert (tmp_path / "a" / "snapshots.bin").read_bytes() == (tmp_path / "b" / "snapshots.bin").read_bytes()


def test_audit(tmp_path):
    assert run(tmp_path, "audit-transcript", *SMALL) == 0
    assert "passed=true" in (tmp_path / "audit.txt").read_text()


def test_config_file_with_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\n[run]\nepochs = 2\ndim = 3\ncrypto = \"transparent\"\n")
    assert parse_config_file(cfg) == {"epochs": 2, "dim": 3, "crypto": "transparent"}
    assert main(["train-centralized", "--config", str(cfg), "--epochs", "4", "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["config"]["dim"] == 3 and len(report["losses"]) == 4


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    with pytest.raises(UsageError):
        parse_config_file(cfg)


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["compare", "--epochs", "-1"],
    ["compare", "--crypto", "rot13"],
    ["train-federated", "--dataset", "/nonexistent/edges.txt"],
    ["evaluate"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    assert main([*argv, "--out", str(tmp_path)]) == 2


def test_evaluate_on_movielens_layout(tmp_path, capsys):
    data = tmp_path / "ml"
    synthetic_split(data)
    out = tmp_path / "out"
    assert run(out, "evaluate", "--dataset", str(data), *SMALL, "--side", "centralized") == 0
    first = json.loads((out / "eval.json").read_text())
    assert 0.0 <= first["precision_at_n"] <= 1.0 and first["evaluated_users"] > 0
    assert run(out, "evaluate", "--dataset", str(data), "--topn", "0") == 2
    assert run(out / "t", "train-centralized", "--dataset", str(data), *SMALL) == 0
    saved = out / "t" / "recommendations.json"
    assert run(out / "s", "evaluate", "--dataset", str(data), *SMALL, "--recs", str(saved)) == 0
    assert json.loads((out / "s" / "eval.json").read_text())["precision_at_n"] == first["precision_at_n"]


def test_compare_on_movielens_layout_checks_metrics(tmp_path):
    data = tmp_path / "ml"
    synthetic_split(data, users=12, items=15, per_user=6)
    assert run(tmp_path / "o", "compare", "--dataset", str(data), *SMALL) == 0
    eq = json.loads((tmp_path / "o" / "equivalence.json").read_text())
    assert eq["metric_gap"] == 0.0 and eq["metrics_within_tol"] is True
    assert (tmp_path / "o" / "metrics.png").exists()


def test_defaults():
    cfg = RunConfig()
    assert (cfg.layers, cfg.dim, cfg.lr, cfg.epochs, cfg.l2, cfg.topn) == (3, 64, 0.01, 100, 1e-4, 5)
