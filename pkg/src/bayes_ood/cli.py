"""Command line entry point: ``bayes-ood {train,score,eval,run,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .exceptions import ConfigError, DataError, InvalidArgumentError, TrainingDivergedError
from .experiment import (ExperimentRecord, emit_reports, load_config, load_trained, metrics_csv,
                         metrics_stage, prepare_stage, run_experiment, score_stage, sha256_file,
                         summary_csv, train_stage)
from .metrics import evaluate, summarize
from .scores import ScoreMethod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

logger = logging.getLogger("bayes_ood")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.format is not None:
        cfg = replace(cfg, format=args.format)
    if getattr(args, "methods", None):
        cfg = replace(cfg, methods=tuple(ScoreMethod.parse(m.strip())
                                         for m in args.methods.split(",") if m.strip()))
    return cfg


def _flush(exc: BaseException, out: Optional[str]):
    record = getattr(exc, "record", None)
    if record is not None and out:
        try:
            emit_reports(record, out)
        except Exception:  # best effort while already failing
            logger.exception("could not flush partial outputs")


def cmd_train(args) -> None:
    cfg = _config(args)
    record = ExperimentRecord(cfg)
    try:
        train, val = prepare_stage(cfg, record)
        train_stage(cfg, record, train, val)
    except Exception as exc:
        exc.record = record
        raise
    emit_reports(record, args.out)
    print(f"trained models written to {args.out}")


def cmd_score(args) -> None:
    cfg = _config(args)
    record = ExperimentRecord(cfg)
    train, _ = prepare_stage(cfg, record)
    arch, posterior, mle, train_ids = load_trained(args.models or args.out)
    if arch != record.arch or not np.array_equal(np.sort(train_ids), np.sort(record.train_ids)):
        raise ConfigError("trained models do not match this config and seed")
    record.posterior, record.mle_weights = posterior, mle
    try:
        score_stage(cfg, record, train)
        metrics_stage(cfg, record)
    except Exception as exc:
        exc.record = record
        raise
    manifest = emit_reports(record, args.out)
    print(f"scores for {len(cfg.methods)} methods written to {args.out} ({len(manifest)} files)")


def _read_score_files(paths: List[str]) -> Dict[str, Dict[str, list]]:
    """Group score dump rows by method: ``{method: {"id": [...], dataset: [...]}}``."""
    grouped: Dict[str, Dict[str, list]] = {}
    for path in paths:
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames != ["input_id", "method", "score", "is_ood_label"]:
                    raise DataError(f"{path}: not a score dump (header {reader.fieldnames})")
                for lineno, row in enumerate(reader, start=2):
                    try:
                        score = float(row["score"])
                        ood = int(row["is_ood_label"])
                    except (TypeError, ValueError):
                        raise DataError(f"{path}:{lineno}: malformed row") from None
                    by = grouped.setdefault(row["method"], {})
                    key = "id" if ood == 0 else row["input_id"].rsplit(":", 1)[0]
                    by.setdefault(key, []).append(score)
        except OSError as exc:
            raise DataError(f"{path}: {exc}") from None
    return grouped


def cmd_eval(args) -> None:
    grouped = _read_score_files(args.scores)
    reports, summary = {}, {}
    for name, by in grouped.items():
        method = ScoreMethod.parse(name)
        if "id" not in by or len(by) < 2:
            raise DataError(f"{name}: score dump needs both ID and OOD rows")
        per = []
        for ds in sorted(k for k in by if k != "id"):
            ids, oods = np.asarray(by["id"]), np.asarray(by[ds])
            rep = evaluate((np.r_[ids, oods], np.r_[np.zeros(ids.size, bool), np.ones(oods.size, bool)]))
            reports[(method, ds)] = rep
            per.append(rep)
        summary[method] = summarize(per)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(reports))
    (out / "summary.csv").write_text(summary_csv(summary))
    sys.stdout.write(metrics_csv(reports))


def cmd_run(args) -> None:
    cfg = _config(args)
    record = run_experiment(cfg)
    manifest = emit_reports(record, args.out)
    print(f"run complete: {len(manifest)} files in {args.out}")
    _print_summary(Path(args.out) / "summary.csv")


def _print_summary(path: Path) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return
    print(f"{'method':<14}{'AUC-ROC':>16}{'FPR95':>16}")
    for r in rows:
        auc = f"{100 * float(r['auc_roc_mean']):.2f} ({100 * float(r['auc_roc_std']):.2f})"
        fpr = f"{100 * float(r['fpr95_mean']):.2f} ({100 * float(r['fpr95_std']):.2f})"
        print(f"{r['method']:<14}{auc:>16}{fpr:>16}")


def cmd_report(args) -> None:
    out = Path(args.out)
    summary = out / "summary.csv"
    if not summary.exists():
        raise DataError(f"{out}: no summary.csv; run 'run' or 'eval' first")
    _print_summary(summary)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        bad = [n for n, h in manifest.items() if not (out / n).exists() or sha256_file(out / n) != h]
        if bad:
            raise DataError(f"checksum mismatch for {bad}")
        print(f"manifest ok: {len(manifest)} files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayes-ood", description="Bayesian post-hoc OOD detection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment YAML file")
            p.add_argument("--seed", type=int, default=None, help="override the master seed")
            p.add_argument("--format", choices=("csv", "idx"), default=None,
                           help="override data.format")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train the BNN and the MLE baseline")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score ID/OOD evaluation data with trained models")
    common(p)
    p.add_argument("--models", default=None, help="directory with trained models (default: --out)")
    p.add_argument("--methods", default=None, help="comma-separated score methods")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute metrics from score dump CSV files")
    common(p, config=False)
    p.add_argument("scores", nargs="+", help="score dump CSV files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="end-to-end experiment")
    common(p)
    p.add_argument("--methods", default=None, help="comma-separated score methods")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="print the summary of a finished run and verify checksums")
    common(p, config=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 after --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidArgumentError) as exc:
        _flush(exc, getattr(args, "out", None))
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, FloatingPointError, ArithmeticError) as exc:
        _flush(exc, getattr(args, "out", None))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
