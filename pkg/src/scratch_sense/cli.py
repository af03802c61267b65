"""Command-line entry point for the full pipeline.

Exit codes: 0 success, 1 user error (bad flags, missing/malformed inputs),
2 runtime failure. `SCRATCH_SENSE_SEED` provides the default for every seed
flag.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import audio_core, experiments, metrics, models, serve, synthgen
from .audio_core import CLASS_NAMES, GestureClass
from .errors import (
    ClipTooShort,
    DatasetTooSmall,
    EmptyAudio,
    InsufficientAudio,
    InvalidClass,
    InvalidLabel,
    InvalidParams,
    MalformedContainer,
    OverlappingSubjectSets,
    ScratchSenseError,
    UnknownSubject,
    UnsupportedEncoding,
    WrongShape,
)
from .features import FeatureKind, WindowTransform

_USER_ERRORS = (
    MalformedContainer,
    UnsupportedEncoding,
    EmptyAudio,
    InsufficientAudio,
    ClipTooShort,
    InvalidParams,
    WrongShape,
    InvalidClass,
    InvalidLabel,
    DatasetTooSmall,
    UnknownSubject,
    OverlappingSubjectSets,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get("SCRATCH_SENSE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _add_seed(parser: argparse.ArgumentParser, name: str = "--seed",
              help_text: str = "random seed") -> None:
    parser.add_argument(name, type=int, default=_default_seed(),
                        help=f"{help_text} (default: $SCRATCH_SENSE_SEED or 0)")


def build_parser() -> _Parser:
    parser = _Parser(prog="scratch-sense",
                     description="Surface gesture recognition from tap/scratch audio.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gesture dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips-per-class", type=int, default=100)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--noise-db", type=float, default=-40.0)
    _add_seed(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("segment", help="cut a recording into fixed-period clips")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--period-s", type=float, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="segment")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("featurize", help="mel-spectrogram a manifest of WAVs")
    p.add_argument("--data", required=True,
                   help="dataset directory containing manifest.jsonl, or a manifest path")
    p.add_argument("--out", required=True, help="output features file")
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("train", help="train one model on a featurized dataset")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--arch", choices=("cnn", "mlp-time", "mlp-freq"), default="cnn")
    p.add_argument("--transform", default="crop", help="window transform (cnn only)")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=48)
    p.add_argument("--kernels", type=int, default=8)
    p.add_argument("--epochs", type=int, default=experiments.DEFAULT_EPOCHS)
    p.add_argument("--history", help="optional TSV of per-epoch loss/accuracy")
    _add_seed(p, "--split-seed", "seed for the 60/15/25 split")
    _add_seed(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gridsearch", help="sweep a config space, select on validation")
    p.add_argument("--features", required=True)
    p.add_argument("--config", required=True, help="key = value sweep file")
    p.add_argument("--transform", help="restrict the sweep to one transform")
    p.add_argument("--out", required=True, help="results table (TSV)")
    p.add_argument("--best", help="checkpoint path for the winning model")
    p.add_argument("--checkpoint-dir", help="save every run's checkpoint here")
    p.add_argument("--jobs", type=int, default=1)
    _add_seed(p, "--split-seed", "seed for the 60/15/25 split")
    p.set_defaults(func=_cmd_gridsearch)

    p = sub.add_parser("transform-study", help="best accuracy per window transform")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="results table (TSV)")
    p.add_argument("--seeds", default="6", help="comma-separated model seeds")
    p.add_argument("--lrs", default="0.1", help="comma-separated learning rates")
    p.add_argument("--batch-sizes", default="48")
    p.add_argument("--kernels", default="8")
    p.add_argument("--epochs", type=int, default=experiments.DEFAULT_EPOCHS)
    p.add_argument("--jobs", type=int, default=1)
    _add_seed(p, "--split-seed", "seed for the 60/15/25 split")
    p.set_defaults(func=_cmd_transform_study)

    p = sub.add_parser("calibration-study",
                       help="random split vs subject split with identical hyperparameters")
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="report path (default: stdout only)")
    p.add_argument("--test-subjects", type=int, default=6)
    p.add_argument("--val-subjects", type=int, default=3)
    p.add_argument("--transform", default="crop")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=48)
    p.add_argument("--kernels", type=int, default=8)
    p.add_argument("--epochs", type=int, default=experiments.DEFAULT_EPOCHS)
    _add_seed(p, "--subject-seed", "seed for choosing held-out subjects")
    _add_seed(p)
    p.set_defaults(func=_cmd_calibration_study)

    p = sub.add_parser("evaluate", help="accuracy, confusion matrix, per-class ROC")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--out-dir", help="write report.tsv and roc_<class>.txt here")
    _add_seed(p, "--split-seed", "seed for the 60/15/25 split")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="stream classifications over HTTP/WebSocket")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--hop-s", type=float, default=serve.DEFAULT_HOP_S)
    p.add_argument("--ui", help="directory with the demo UI bundle")
    p.set_defaults(func=_cmd_serve)

    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_synth(args: argparse.Namespace) -> int:
    spec = synthgen.SynthSpec(seed=args.seed, clips_per_class=args.clips_per_class,
                              subjects=args.subjects, noise_db=args.noise_db)
    manifest = synthgen.make_synthetic_dataset(spec, args.out)
    print(f"wrote {len(manifest.records)} clips "
          f"({args.clips_per_class} per class, {args.subjects} subjects) to {args.out}")
    return 0


def _cmd_segment(args: argparse.Namespace) -> int:
    clip = audio_core.read_wav(args.input)
    segments = audio_core.segment_fixed_period(clip, args.period_s, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, segment in enumerate(segments):
        audio_core.write_wav(out / f"{args.prefix}_{i:04d}.wav", segment)
    print(f"wrote {len(segments)} segments of {args.period_s} s to {out}")
    return 0


def _resolve_manifest(data: str) -> tuple[Path, Path]:
    path = Path(data)
    manifest_path = path / "manifest.jsonl" if path.is_dir() else path
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    return manifest_path, manifest_path.parent


def _cmd_featurize(args: argparse.Namespace) -> int:
    manifest_path, root = _resolve_manifest(args.data)
    manifest = audio_core.read_manifest(manifest_path)
    dataset = experiments.featurize_manifest(manifest, root)
    experiments.save_dataset(args.out, dataset)
    print(f"featurized {len(dataset)} clips -> {args.out}")
    return 0


def _write_history(path: str, history: experiments.TrainHistory) -> None:
    lines = ["epoch\ttrain_loss\ttrain_accuracy\tvalidation_accuracy"]
    for i in range(len(history)):
        lines.append(f"{i + 1}\t{history.train_loss[i]:.6f}"
                     f"\t{history.train_accuracy[i]:.4f}\t{history.validation_accuracy[i]:.4f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = experiments.load_dataset(args.features)
    split = experiments.split_random(len(dataset), args.split_seed)
    if args.arch == "cnn":
        config = experiments.ExperimentConfig(
            seed=args.seed, learning_rate=args.lr, batch_size=args.batch_size,
            kernels=args.kernels, transform=WindowTransform.from_name(args.transform),
            epochs=args.epochs,
        )
        model, history = experiments.train(config, dataset, split)
        train_config = config.to_dict()
    else:
        kind = FeatureKind.TIME_ENERGY if args.arch == "mlp-time" else FeatureKind.FREQUENCY_ENERGY
        model, history = experiments.train_baseline(
            kind, dataset, split, seed=args.seed, learning_rate=args.lr,
            batch_size=args.batch_size, epochs=args.epochs,
        )
        train_config = {"seed": args.seed, "learning_rate": args.lr,
                        "batch_size": args.batch_size, "epochs": args.epochs,
                        "arch": args.arch}
    models.save_checkpoint(model, args.out, train_config=train_config)
    if args.history:
        _write_history(args.history, history)
    print(f"final validation accuracy {history.validation_accuracy[-1]:.4f}; "
          f"checkpoint -> {args.out}")
    return 0


def _cmd_gridsearch(args: argparse.Namespace) -> int:
    dataset = experiments.load_dataset(args.features)
    split = experiments.split_random(len(dataset), args.split_seed)
    axes = experiments.parse_config_file(args.config)
    override = WindowTransform.from_name(args.transform) if args.transform else None
    space = experiments.grid_from_axes(axes, transform_override=override)
    result = experiments.grid_search(space, dataset, split, jobs=args.jobs,
                                     checkpoint_dir=args.checkpoint_dir)
    Path(args.out).write_text(result.format_table() + "\n", encoding="utf-8")
    if result.best_index is None:
        print("every configuration diverged; no model selected")
        return 0
    best = space[result.best_index]
    print(f"{len(space)} configs; best #{result.best_index} "
          f"(seed={best.seed} lr={best.learning_rate} batch={best.batch_size} "
          f"kernels={best.kernels} transform={best.transform.value}) "
          f"test accuracy {result.test_accuracy:.4f}")
    if args.best:
        models.save_checkpoint(result.best_model, args.best, train_config=best.to_dict())
        print(f"best checkpoint -> {args.best}")
    return 0


def _parse_int_list(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",") if v.strip()]


def _cmd_transform_study(args: argparse.Namespace) -> int:
    dataset = experiments.load_dataset(args.features)
    split = experiments.split_random(len(dataset), args.split_seed)
    rows = experiments.run_transform_study(
        dataset, split,
        seeds=_parse_int_list(args.seeds),
        learning_rates=[float(v) for v in args.lrs.split(",") if v.strip()],
        batch_sizes=_parse_int_list(args.batch_sizes),
        kernel_counts=_parse_int_list(args.kernels),
        epochs=args.epochs,
        jobs=args.jobs,
    )
    table = experiments.format_transform_table(rows)
    Path(args.out).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _cmd_calibration_study(args: argparse.Namespace) -> int:
    dataset = experiments.load_dataset(args.features)
    config = experiments.ExperimentConfig(
        seed=args.seed, learning_rate=args.lr, batch_size=args.batch_size,
        kernels=args.kernels, transform=WindowTransform.from_name(args.transform),
        epochs=args.epochs,
    )
    report = experiments.run_calibration_study(
        dataset, config, n_test_subjects=args.test_subjects,
        n_validation_subjects=args.val_subjects, subject_seed=args.subject_seed,
    )
    text = "\n".join([
        f"random-split test accuracy   {report.random_split.accuracy:.4f}",
        f"subject-split test accuracy  {report.subject_split.accuracy:.4f}",
        f"accuracy gap                 {report.accuracy_gap:+.4f}",
        f"held-out subjects            {', '.join(report.test_subjects)}",
        "",
        "random-split confusion matrix:",
        report.random_split.confusion.format_table(),
        "",
        "subject-split confusion matrix:",
        report.subject_split.confusion.format_table(),
    ])
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = experiments.load_dataset(args.features)
    model, descriptor = models.load_checkpoint(args.model)
    if args.split == "all":
        indices = list(range(len(dataset)))
    else:
        split = experiments.split_random(len(dataset), args.split_seed)
        indices = getattr(split, args.split)
    if descriptor["arch"] == "cnn":
        report = experiments.evaluate_split(
            model, dataset, indices, transform=serve.transform_for_model(descriptor)
        )
    else:
        kind = FeatureKind.TIME_ENERGY if descriptor["input_dim"] == 65 \
            else FeatureKind.FREQUENCY_ENERGY
        report = experiments.evaluate_split(model, dataset, indices, kind=kind)
    print(report.format_table())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(report.format_table() + "\n", encoding="utf-8")
        x = dataset.cnn_inputs(serve.transform_for_model(descriptor)) \
            if descriptor["arch"] == "cnn" else dataset.baseline_features(
                FeatureKind.TIME_ENERGY if descriptor["input_dim"] == 65
                else FeatureKind.FREQUENCY_ENERGY)
        probs = experiments._predict_batched(model, x[np.asarray(indices)])
        truth = dataset.labels[np.asarray(indices)]
        for c, curve in metrics.one_vs_rest_curves(probs, truth).items():
            metrics.write_curve_points(out / f"roc_{CLASS_NAMES[c]}.txt", curve)
        print(f"report and ROC curves -> {out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    app = serve.create_app_from_checkpoint(args.model, hop_s=args.hop_s, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"scratch-sense: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"scratch-sense: error: {exc}", file=sys.stderr)
        return 1
    except ScratchSenseError as exc:
        print(f"scratch-sense: failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"scratch-sense: failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
