"""Command-line experiment runner.

Subcommands: generate, train, eval, analyze, sweep, ledger. Configuration
comes from a JSON file (see ExperimentConfig) with flag overrides; every
output lands under the configured output directory. Set FEDSPAN_OUTPUT_ROOT
to relocate relative output directories.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .corpus import Corpus, dedup_report_json, deduplicate, read_corpus_dir, write_corpus_dir
from .federation import comm_ledger, prototype_similarity, run_baselines, run_federated
from .model import SpanTagger
from .prototypes import decode_payload
from .synth import SynthConfig, default_synth_config, generate_synthetic
from .tagging import tag_label

OUTPUT_ROOT_ENV = "FEDSPAN_OUTPUT_ROOT"

DEFAULT_ALIGN_GRID = [0.0, 0.0005, 0.002, 0.008, 0.032]
DEFAULT_SEP_GRID = [0.0, 6.25e-05, 0.00025, 0.001, 0.004]


def _resolve_output(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig()
    overrides = {
        name: getattr(args, name)
        for name in ExperimentConfig.field_names()
        if hasattr(args, name) and getattr(args, name) is not None
    }
    return config.override(**overrides)


def _synth_config(config: ExperimentConfig) -> SynthConfig:
    if config.synth_config:
        return SynthConfig.from_file(config.synth_config)
    return default_synth_config()


def _load_corpora(config: ExperimentConfig) -> tuple[list[Corpus], list]:
    if config.corpus_dirs:
        corpora = [read_corpus_dir(d) for d in config.corpus_dirs]
    else:
        corpora = generate_synthetic(_synth_config(config), config.corpus_seed)
    return deduplicate(corpora, case_sensitive=config.dedup_case_sensitive)


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _resolve_output(config)
    synth = _synth_config(config)
    corpora = generate_synthetic(synth, config.corpus_seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "synth_config.json").write_text(json.dumps(synth.to_dict(), indent=2), encoding="utf-8")
    for corpus in corpora:
        write_corpus_dir(corpus, out / "corpora" / corpus.name)
    print(f"wrote {len(corpora)} corpora under {out / 'corpora'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _resolve_output(config)
    corpora, report = _load_corpora(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")
    (out / "dedup_report.json").write_text(dedup_report_json(report), encoding="utf-8")
    if config.mode == "federated":
        records = run_federated(corpora, config, out)
    else:
        records = run_baselines(corpora, config, config.mode, out)
    print(f"wrote {len(records)} records to {out / 'records.jsonl'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    corpora = [read_corpus_dir(d) for d in args.corpus]
    for corpus in corpora:
        if not corpus.split(args.split):
            raise ValueError(f"corpus {corpus.name!r} has an empty {args.split} split")
    models = [(Path(p).name, SpanTagger.load(p)) for p in args.checkpoint]
    matrix = []
    detailed = {}
    for name, model in models:
        row = []
        for corpus in corpora:
            metrics = model.evaluate(corpus.split(args.split))
            row.append(metrics.f1)
            detailed[f"{name}:{corpus.name}"] = {
                "precision": metrics.precision,
                "recall": metrics.recall,
                "f1": metrics.f1,
                "tp": metrics.tp,
                "fp": metrics.fp,
                "fn": metrics.fn,
            }
        matrix.append(row)
    result = {
        "checkpoints": [name for name, _ in models],
        "corpora": [c.name for c in corpora],
        "split": args.split,
        "f1_matrix": matrix,
        "metrics": detailed,
    }
    print(json.dumps(result, indent=2))
    return 0


def _read_records_file(path: Path) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"no record file at {path}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_analyze(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    out = Path(args.out) if args.out else run_dir / "analysis"
    records = _read_records_file(run_dir / "records.jsonl")
    config = ExperimentConfig.from_file(run_dir / "config.json")
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "f1_curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client", "corpus", "val_f1", "test_in_domain_f1"])
        for rec in records:
            in_domain = rec["test_f1_matrix"].get(rec["corpus"], "")
            writer.writerow([rec["round"], rec["client"], rec["corpus"], rec["val_f1"], in_domain])

    payload_dir = run_dir / "payloads"
    payload_files = sorted(payload_dir.glob("client_*.bin")) if payload_dir.is_dir() else []
    if payload_files:
        payloads = [decode_payload(p.read_bytes()) for p in payload_files]
        corpus_by_client = {rec["client"]: rec["corpus"] for rec in records}
        names = [corpus_by_client.get(p.client_id, str(p.client_id)) for p in payloads]
        similarity = prototype_similarity(payloads)
        with open(out / "prototype_similarity.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["corpus"] + names)
            for name, row in zip(names, similarity):
                writer.writerow([name] + [f"{v:.6f}" for v in row])
        with open(out / "prototype_vectors.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            dim = payloads[0].prototypes.dim
            writer.writerow(["client", "corpus", "class", "label"] + [f"v{i}" for i in range(dim)])
            for name, payload in zip(names, payloads):
                for cls in payload.prototypes.classes():
                    vec = payload.prototypes.vectors[cls]
                    writer.writerow(
                        [payload.client_id, name, cls, tag_label(cls)] + [f"{v:.8g}" for v in vec]
                    )

    ledger = comm_ledger(config, records)
    (out / "ledger.json").write_text(json.dumps(ledger, indent=2), encoding="utf-8")
    print(f"analysis written to {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _resolve_output(config)
    corpora, _ = _load_corpora(config)
    axes = ["align", "sep"] if args.axis == "both" else [args.axis]
    values = [float(v) for v in args.values.split(",")] if args.values else None
    rows = []
    for axis in axes:
        grid = values or (DEFAULT_ALIGN_GRID if axis == "align" else DEFAULT_SEP_GRID)
        for value in grid:
            field = "align_weight" if axis == "align" else "sep_weight"
            cell = config.override(**{field: value})
            records = run_federated(corpora, cell)
            final = [r for r in records if r["round"] == cell.rounds]
            for rec in final:
                rows.append(
                    [
                        axis,
                        value,
                        rec["client"],
                        rec["corpus"],
                        rec["val_f1"],
                        rec["test_f1_matrix"].get(rec["corpus"], ""),
                    ]
                )
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep_summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "client", "corpus", "final_val_f1", "final_test_f1"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {path}")
    return 0


def cmd_ledger(args: argparse.Namespace) -> int:
    config = _load_config(args)
    records = _read_records_file(Path(args.records)) if args.records else None
    print(json.dumps(comm_ledger(config, records), indent=2))
    return 0


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--mode", choices=["single", "merged", "federated"], dest="mode")
    parser.add_argument("--aggregation", choices=["uniform", "f1_weighted"], dest="aggregation")
    parser.add_argument("--rounds", type=int, dest="rounds")
    parser.add_argument("--local-epochs", type=int, dest="local_epochs")
    parser.add_argument("--seed", type=int, dest="seed")
    parser.add_argument("--params-seed", type=int, dest="params_seed")
    parser.add_argument("--corpus-seed", type=int, dest="corpus_seed")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--align-weight", type=float, dest="align_weight")
    parser.add_argument("--sep-weight", type=float, dest="sep_weight")
    parser.add_argument("--proto-weight", type=float, dest="proto_weight")
    parser.add_argument("--prototype-momentum", type=float, dest="prototype_momentum")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--rep-dim", type=int, dest="rep_dim")
    parser.add_argument("--l-max", type=int, dest="l_max")
    parser.add_argument("--synth-config", dest="synth_config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedspan",
        description="Prototype-sharing federated training for span-based sentiment triplets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic corpora to disk")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run single/merged/federated training")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on corpora")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--corpus", action="append", required=True, help="corpus directory")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="export CSV summaries from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="grid over the prototype loss weights")
    _add_config_arguments(p)
    p.add_argument("--axis", choices=["align", "sep", "both"], default="both")
    p.add_argument("--values", help="comma-separated grid values (single axis)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ledger", help="print the communication accounting report")
    _add_config_arguments(p)
    p.add_argument("--records", help="records.jsonl of a finished run")
    p.set_defaults(func=cmd_ledger)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
