"""Command-line entry point.

Stages share an output directory: ``synth`` writes ``<out>/corpus``,
``prepare`` writes the sample archive ``<out>/archive`` (from
``<out>/corpus`` when present, else from the config's data source), and the
experiment subcommands read ``<out>/archive`` when present, else build the
dataset from the config's data source.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, ForecastError
from .evaluation import MetricsReport, evaluate_model, load_report_json, render_reports, save_report_json
from .experiments import (
    ExperimentConfig,
    load_config,
    load_dataset_archive,
    prepare_dataset,
    run_architecture_comparison,
    run_general,
    run_personalization,
    run_personalization_all,
    synthesize,
    write_dataset_archive,
)
from .checkpoint import load_checkpoint_with_provenance
from .pipeline.dataset import ingest_corpus

logger = logging.getLogger("seizure_forecast")


class UsageError(ForecastError):
    code = "E_USAGE"
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64): {text}")
    return value


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--config", type=Path, default=default, help="experiment config file (YAML)")
    parser.add_argument("--seed", type=_u64, default=default, help="override the config seed")
    parser.add_argument("--out", type=Path, default=default, help="output directory (default: config output_dir)")
    parser.add_argument("--verbose", action="store_true", default=default, help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seizure-forecast", description="Seizure forecasting from wearable signals.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, None)
    common = _Parser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate the synthetic corpus from the profile file")
    sub.add_parser("prepare", parents=[common], help="ingest, window, split and scale into a sample archive")
    sub.add_parser("train", parents=[common], help="train and evaluate the general model")
    sub.add_parser("compare", parents=[common], help="architecture comparison on identical splits")
    p = sub.add_parser("personalize", parents=[common], help="leave-one-patient-out personalization")
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--patient", help="held-out patient id")
    who.add_argument("--all", action="store_true", help="every patient, plus the per-patient summary")
    e = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("report", parents=[common], help="re-render CSV reports from saved metrics")
    return parser


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    return load_config(args.config, seed=args.seed, output_dir=args.out)


def _dataset(config: ExperimentConfig, out: Path):
    archive = out / "archive"
    if (archive / "manifest.json").exists():
        logger.info("using sample archive %s", archive)
        return load_dataset_archive(archive)
    return prepare_dataset(config)


def cmd_synth(args) -> None:
    config = _config(args)
    written = synthesize(config, config.output_dir / "corpus")
    print(f"wrote {len(written)} patients to {config.output_dir / 'corpus'}")


def cmd_prepare(args) -> None:
    config = _config(args)
    corpus = config.output_dir / "corpus"
    recordings = ingest_corpus(corpus) if corpus.is_dir() else None
    dataset = prepare_dataset(config, recordings)
    write_dataset_archive(dataset, config.output_dir / "archive", config)
    counts = {k: len(v) for k, v in dataset.splits.parts().items()}
    print(f"wrote sample archive {config.output_dir / 'archive'} {json.dumps(counts)}")


def _print_report(name: str, r: MetricsReport) -> None:
    print(f"{name}: accuracy={r.accuracy:.4f} precision={r.precision:.4f} recall={r.recall:.4f} "
          f"f1={r.f1:.4f} auc={r.auc_roc:.4f}")


def cmd_train(args) -> None:
    config = _config(args)
    result = run_general(config, _dataset(config, config.output_dir), config.output_dir)
    _print_report(config.architecture, result.report)


def cmd_compare(args) -> None:
    config = _config(args)
    reports = run_architecture_comparison(config, _dataset(config, config.output_dir), config.output_dir)
    for arch, r in reports.items():
        _print_report(arch, r)


def cmd_personalize(args) -> None:
    config = _config(args)
    dataset = _dataset(config, config.output_dir)
    if args.all:
        results = run_personalization_all(config, dataset, config.output_dir)
    else:
        r = run_personalization(config, args.patient, dataset,
                                config.output_dir / "personalization" / args.patient)
        results = {r.patient_id: r}
    for pid, r in sorted(results.items()):
        print(f"{pid}: before={r.before.accuracy:.4f} after={r.after.accuracy:.4f}")


def cmd_evaluate(args) -> None:
    config = _config(args)
    model, prov = load_checkpoint_with_provenance(args.checkpoint, expected_architecture=config.architecture)
    dataset = _dataset(config, config.output_dir)
    report = evaluate_model(model, dataset.splits.test)
    out = config.output_dir / "evaluation"
    render_reports(report, "general", out)
    save_report_json(out / "metrics.json", {"general": report.to_dict(), "checkpoint_provenance": prov})
    _print_report(model.architecture, report)


def cmd_report(args) -> None:
    out = args.out if args.out is not None else (_config(args).output_dir if args.config else None)
    if out is None:
        raise ConfigError("report needs --out or --config")
    rendered = []
    if (out / "metrics.json").exists():
        doc = load_report_json(out / "metrics.json")
        rendered += render_reports(MetricsReport.from_dict(doc["general"]), "general", out)
    if (out / "comparison_metrics.json").exists():
        doc = load_report_json(out / "comparison_metrics.json")
        rendered += render_reports({k: MetricsReport.from_dict(v) for k, v in doc.items()},
                                   "architecture_comparison", out)
    per_patient = {}
    for path in sorted((out / "personalization").glob("*/metrics.json")):
        doc = load_report_json(path)
        per_patient[doc["patient_id"]] = (MetricsReport.from_dict(doc["before"]), MetricsReport.from_dict(doc["after"]))
    if per_patient:
        pairs = dict(sorted(per_patient.items()))
        rendered += render_reports(pairs, "per_patient_before_after", out)
        rendered += render_reports(pairs, "appendix", out)
    if not rendered:
        raise ConfigError(f"{out}: no saved metrics to render")
    for p in rendered:
        print(p)


COMMANDS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "compare": cmd_compare,
    "personalize": cmd_personalize, "evaluate": cmd_evaluate, "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ForecastError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [E_IO]: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
