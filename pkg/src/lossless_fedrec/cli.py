"""Command-line driver.

``fedrec <command> [flags]`` with commands ``train-federated``,
``train-centralized``, ``compare``, ``evaluate`` and ``audit-transcript``.
Settings come from defaults, then an optional ``--config`` file of
``key = value`` lines, then flags. Exit codes: 0 success or pass,
1 failed check or runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import (
    DataError,
    filter_positive,
    fixture_example,
    held_out_positives,
    load_edge_file,
    load_split,
)
from .engine import TrainConfig
from .graph import GraphError, InteractionGraph
from .metrics import EvalReport, compare_runs, precision_recall_at_n, write_report
from .plots import plot_equivalence, plot_losses, plot_metrics
from .protocol import FederatedRun, ProtocolAbort, Transcript
from .protocol.audit import audit_run
from .reference import GraphOperators, ParamSnapshot, centralized_predict, centralized_train, final_embeddings
from .snapshots import write_snapshots

log = logging.getLogger("lossless_fedrec")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = "fixture"
    layers: int = 3
    dim: int = 64
    lr: float = 0.01
    epochs: int = 100
    l2: float = 1e-4
    seed: int = 0
    topn: int = 5
    crypto: str = "real"
    tol: float = 1e-9
    metric_tol: float = 1e-6
    threads: int = 1
    transport: str = "inprocess"
    split: str = "u1"
    threshold: int = 4
    transcript_lines: int = 200_000
    out: str = "fedrec-out"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            layers=self.layers, dim=self.dim, lr=self.lr, epochs=self.epochs, seed=self.seed, l2=self.l2
        )

    def validate(self) -> None:
        try:
            self.train_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if self.topn <= 0:
            raise UsageError("topn must be positive")
        if self.crypto not in ("real", "transparent"):
            raise UsageError(f"crypto must be real or transparent, not {self.crypto!r}")
        if self.transport not in ("inprocess", "socket"):
            raise UsageError(f"transport must be inprocess or socket, not {self.transport!r}")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if not self.tol >= 0 or not self.metric_tol >= 0:
            raise UsageError("tolerances must be >= 0")
        if self.transcript_lines < 0:
            raise UsageError("transcript-lines must be >= 0")
        if self.dataset != "fixture" and not Path(self.dataset).exists():
            raise UsageError(f"dataset path does not exist: {self.dataset}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _cast(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        return _CASTS[kind](raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` comments, optional quotes, dashes or underscores in keys."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            raw = raw[1:-1]
        values[key] = _cast(key, raw)
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedrec", description="Federated LightGCN training and its centralized counterpart.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "train-federated": "train with the federated protocol",
        "train-centralized": "train the full-graph reference model",
        "compare": "train both ways and check they agree",
        "evaluate": "Precision@n / Recall@n of saved or freshly computed recommendations",
        "audit-transcript": "run the protocol and check the server-side privacy invariants",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value settings file")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, type=_CASTS[f.type], default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--recs", help="recommendations.json written by a train command")
            p.add_argument("--side", choices=("federated", "centralized"), default="federated")
    return parser


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for f in fields(RunConfig):
        value = getattr(args, f.name)
        if value is not None:
            values[f.name] = value
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# -- data ----------------------------------------------------------------------


@dataclass
class Dataset:
    name: str
    graph: InteractionGraph
    held_out: dict[int, set[int]] | None


def load_dataset(cfg: RunConfig) -> Dataset:
    """``fixture``, a MovieLens directory with ``<split>.base/.test``, or an edge file."""
    if cfg.dataset == "fixture":
        return Dataset("fixture", fixture_example(), None)
    path = Path(cfg.dataset)
    if path.is_dir():
        base, test = load_split(path, cfg.split)
        train = filter_positive(base, cfg.threshold)
        return Dataset(f"{path.name}/{cfg.split}", train.graph(), held_out_positives(test, train, cfg.threshold))
    return Dataset(path.name, load_edge_file(path), None)


# -- runs ------------------------------------------------------------------------


@dataclass
class SideResult:
    snapshots: list[ParamSnapshot]
    losses: list[float]
    recommendations: list[list[int]]
    final: ParamSnapshot
    seconds: float


def run_centralized_side(cfg: RunConfig, data: Dataset) -> SideResult:
    start = time.perf_counter()
    state = centralized_train(data.graph, cfg.train_config())
    recs = centralized_predict(state, cfg.topn)
    uf, itf = final_embeddings(GraphOperators(data.graph), state.users, state.items, cfg.layers)
    return SideResult(state.snapshots, state.losses, recs, ParamSnapshot(cfg.epochs, uf, itf), time.perf_counter() - start)


def run_federated_side(cfg: RunConfig, data: Dataset, out: Path, keep: bool = False, crypto: str | None = None):
    start = time.perf_counter()
    with open(out / "transcript.log", "w", encoding="utf-8") as sink:
        transcript = Transcript(sink, detail_lines=cfg.transcript_lines, keep=keep)
        run = FederatedRun(
            data.graph, cfg.train_config(), crypto or cfg.crypto, cfg.transport, cfg.threads, transcript
        )
        try:
            run.setup()
            result = run.train(on_epoch=lambda e, loss: log.info("federated epoch %d loss %.6f", e + 1, loss))
            recs = run.run_predict(cfg.topn)
            final = run.final_tables()
        finally:
            run.close()
    side = SideResult(result.snapshots, result.losses, recs, final, time.perf_counter() - start)
    return side, run


def _write_side(out: Path, prefix: str, side: SideResult) -> None:
    write_snapshots(out / f"{prefix}snapshots.bin", side.snapshots)
    write_snapshots(out / f"{prefix}final_embeddings.bin", [side.final])
    with open(out / f"{prefix}recommendations.json", "w", encoding="utf-8") as fh:
        json.dump({"recommendations": side.recommendations}, fh)
        fh.write("\n")


def _evaluate(cfg: RunConfig, data: Dataset, recs) -> EvalReport | None:
    if data.held_out is None:
        return None
    return precision_recall_at_n(recs, data.held_out, cfg.topn)


def _train_report(cfg: RunConfig, data: Dataset, side: SideResult, mode: str, evaluation) -> dict:
    report = {
        "kind": "train",
        "mode": mode,
        "dataset": data.name,
        "users": data.graph.num_users,
        "items": data.graph.num_items,
        "interactions": data.graph.num_edges,
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "threads", "transcript_lines")},
        "losses": side.losses,
        "final_loss": side.losses[-1] if side.losses else None,
    }
    if evaluation is not None:
        report["precision_at_n"] = evaluation.precision_at_n
        report["recall_at_n"] = evaluation.recall_at_n
    return report


def _write_json_text(out: Path, stem: str, report: dict) -> None:
    with open(out / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = []
    for key, value in report.items():
        if key == "losses":
            lines.extend(f"loss_epoch{k + 1}={v!r}" for k, v in enumerate(value))
        elif isinstance(value, dict):
            lines.extend(f"{key}.{k}={v}" for k, v in value.items())
        else:
            lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    (out / f"{stem}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- commands --------------------------------------------------------------------


def cmd_train(cfg: RunConfig, mode: str) -> int:
    data = load_dataset(cfg)
    out = _outdir(cfg)
    if mode == "federated":
        side, _ = run_federated_side(cfg, data, out)
    else:
        side = run_centralized_side(cfg, data)
    _write_side(out, "", side)
    evaluation = _evaluate(cfg, data, side.recommendations)
    _write_json_text(out, "report", _train_report(cfg, data, side, mode, evaluation))
    plot_losses(out / "loss.png", {mode: side.losses})
    if evaluation is not None:
        write_report(evaluation, out / "eval")
        plot_metrics(out / "metrics.png", {mode: evaluation})
    print(f"{mode} training done in {side.seconds:.2f}s; outputs in {out}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    out = _outdir(cfg)
    central = run_centralized_side(cfg, data)
    fed, _ = run_federated_side(cfg, data, out)
    _write_side(out, "federated_", fed)
    _write_side(out, "centralized_", central)
    report = compare_runs(fed.snapshots, central.snapshots, cfg.tol, fed.recommendations, central.recommendations)
    fed_eval = _evaluate(cfg, data, fed.recommendations)
    cen_eval = _evaluate(cfg, data, central.recommendations)
    metrics_ok = True
    if fed_eval is not None:
        gap = max(
            abs(fed_eval.precision_at_n - cen_eval.precision_at_n),
            abs(fed_eval.recall_at_n - cen_eval.recall_at_n),
        )
        metrics_ok = gap <= cfg.metric_tol
        report.extra.update(
            {
                "federated_precision_at_n": fed_eval.precision_at_n,
                "federated_recall_at_n": fed_eval.recall_at_n,
                "centralized_precision_at_n": cen_eval.precision_at_n,
                "centralized_recall_at_n": cen_eval.recall_at_n,
                "metric_gap": gap,
                "metrics_within_tol": metrics_ok,
            }
        )
        plot_metrics(out / "metrics.png", {"federated": fed_eval, "centralized": cen_eval})
    write_report(report, out / "equivalence")
    plot_equivalence(out / "equivalence.png", report)
    plot_losses(out / "loss.png", {"federated": fed.losses, "centralized": central.losses})
    passed = report.passed and metrics_ok
    print(report.to_text(), end="")
    print(f"federated {fed.seconds:.2f}s, centralized {central.seconds:.2f}s")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_evaluate(cfg: RunConfig, args) -> int:
    data = load_dataset(cfg)
    if data.held_out is None:
        raise UsageError("evaluate needs a dataset with held-out interactions (a MovieLens split directory)")
    out = _outdir(cfg)
    if args.recs:
        try:
            recs = json.loads(Path(args.recs).read_text(encoding="utf-8"))["recommendations"]
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read recommendations: {exc}") from exc
    elif args.side == "centralized":
        recs = run_centralized_side(cfg, data).recommendations
    else:
        recs = run_federated_side(cfg, data, out)[0].recommendations
    report = precision_recall_at_n(recs, data.held_out, cfg.topn)
    write_report(report, out / "eval")
    plot_metrics(out / "metrics.png", {args.side if not args.recs else "saved": report})
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_audit(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    out = _outdir(cfg)
    # tags are only attributable to items under transparent crypto
    _, run = run_federated_side(cfg, data, out, keep=True, crypto="transparent")
    report = audit_run(run)
    (out / "audit.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / "audit.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_FAIL


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}") from exc
    return out


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
        )
        cfg = resolve_config(args)
        if args.command == "train-federated":
            return cmd_train(cfg, "federated")
        if args.command == "train-centralized":
            return cmd_train(cfg, "centralized")
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args)
        return cmd_audit(cfg)
    except UsageError as exc:
        print(f"fedrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError) as exc:
        print(f"fedrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolAbort, OSError) as exc:
        print(f"fedrec: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
