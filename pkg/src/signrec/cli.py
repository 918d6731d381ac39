"""Command-line surface.

Subcommands: gen-data, train, eval, inspect-labels, visign-partition,
export. Exit codes: 0 success, 2 configuration or parse error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import figures
from .dataio import load_dataset, save_dataset
from .errors import DataError, SignRecError
from .evaluate import evaluate_split, visign_partition
from .lexicon import language_aware_soft_label, load_word_vectors
from .model import SignModel, export_inference_checkpoint
from .synth import SynthSpec, generate_dataset
from .trainer import load_train_config, train

log = logging.getLogger("signrec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signrec",
        description="Train and evaluate the language-assisted sign recognizer "
        "on synthetic video-keypoint data.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="training config (JSON or TOML)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument(
        "--reproducible",
        action="store_true",
        help="force fully serialized execution (runs are bit-reproducible)",
    )
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test")
    p.add_argument("--crops", type=int, choices=(1, 3), default=1)
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p = sub.add_parser("inspect-labels", help="dump one gloss's soft label")
    p.add_argument("--lexicon", required=True, help="word-vector text file")
    p.add_argument("--gloss", required=True)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=0.5)

    p = sub.add_parser(
        "visign-partition", help="identify confusable signs from a baseline report"
    )
    p.add_argument("--baseline-report", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--similarity", type=float, default=0.5)

    p = sub.add_parser("export", help="write an inference-only checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--inference-only",
        action="store_true",
        required=True,
        help="strip training-only parameters (required; the only export mode)",
    )
    p.add_argument("--out", required=True)
    return parser


def cmd_gen_data(args) -> int:
    spec = SynthSpec.from_file(args.spec)
    dataset = generate_dataset(spec)
    manifest = save_dataset(dataset, args.out)
    counts = {k: len(v) for k, v in dataset.splits.items()}
    print(f"wrote {manifest} ({counts})")
    return 0


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.reproducible:
        config.reproducible = True
    dataset = load_dataset(args.data)
    result = train(dataset, config, out_dir=args.out)
    print(
        f"trained {result.epochs_run} epochs, final train top-1 "
        f"{result.final_train_top1:.4f}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.csv_path}")
    if not args.no_figures:
        fig = figures.training_curves(result.metrics, Path(args.out) / "training_curves.png")
        print(f"figure:     {fig}")
    return 0


def cmd_eval(args) -> int:
    model, _meta, _kind = SignModel.load(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate_split(model, dataset, split=args.split, crops=args.crops)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"report: {report_path}")
    print(
        f"{args.split}: per-instance top-1 {report['per_instance_topk']['1']:.4f}, "
        f"per-class top-1 {report['per_class_topk']['1']:.4f} "
        f"({report['n_instances']} instances, {args.crops}-crop)"
    )
    if not args.no_figures:
        stem = report_path.with_suffix("")
        print(f"figure: {figures.confusion_heatmap(report, Path(str(stem) + '_confusion.png'))}")
        print(f"figure: {figures.per_class_chart(report, Path(str(stem) + '_per_class.png'))}")
    return 0


def cmd_inspect_labels(args) -> int:
    lexicon = load_word_vectors(args.lexicon)
    b = lexicon.index(args.gloss)
    label = language_aware_soft_label(lexicon, b, args.epsilon, args.tau)
    print(
        json.dumps(
            {
                "gloss": args.gloss,
                "epsilon": args.epsilon,
                "tau": args.tau,
                "probs": [float(p) for p in label.probs],
            }
        )
    )
    return 0


def cmd_visign_partition(args) -> int:
    path = Path(args.baseline_report)
    if not path.exists():
        raise DataError(f"baseline report not found: {path}")
    report = json.loads(path.read_text())
    lexicon = load_word_vectors(args.lexicon)
    partition = visign_partition(
        report, lexicon.sim, delta_threshold=args.delta,
        similarity_threshold=args.similarity,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(partition, indent=1, sort_keys=True))
    c = partition["counts"]
    print(
        f"partition: {c['vs_s']} similar-meaning, {c['vs_d']} distinct-meaning, "
        f"{c['non_vs']} unconfused instances -> {out}"
    )
    return 0


def cmd_export(args) -> int:
    export_inference_checkpoint(args.checkpoint, args.out)
    print(f"inference checkpoint: {args.out}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-labels": cmd_inspect_labels,
    "visign-partition": cmd_visign_partition,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except SignRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
