"""Dataset handling, the training loop, grid search, and the paper-style studies.

Training is bitwise reproducible: model init, per-epoch shuffling, and batch
order are pure functions of the experiment config, and every kernel in
tensor_nn uses a fixed accumulation order. Running the same config on the
same dataset twice yields identical parameters and history.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio_core import (
    AudioClip,
    DatasetManifest,
    GestureRecord,
    TARGET_SAMPLE_RATE,
    read_wav,
    resample,
)
from .errors import (
    DatasetTooSmall,
    InvalidParams,
    NumericalDivergence,
    OverlappingSubjectSets,
    UnknownSubject,
)
from .features import (
    FLOOR_DB,
    FeatureKind,
    MelSpectrogram,
    WindowTransform,
    freq_energy_features,
    mel_spectrogram,
    time_energy_features,
    window_transform,
)
from .metrics import MetricsReport, evaluate_predictions
from .models import (
    Model,
    build_cnn,
    build_mlp,
    read_container,
    save_checkpoint,
    write_container,
)
from .tensor_nn import (
    AdamState,
    adam_step,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_grad,
)

TRAIN_FRACTION = 0.60
VALIDATION_FRACTION = 0.15
DEFAULT_EPOCHS = 50
_EVAL_BATCH = 128

#: The stock hyperparameter sweep axes (2 * 3 * 4 * 4 = 96 configs per transform).
STOCK_SEEDS = (6, 42)
STOCK_LEARNING_RATES = (0.3, 0.1, 0.01)
STOCK_BATCH_SIZES = (24, 48, 64, 126)
STOCK_KERNEL_COUNTS = (4, 8, 12, 26)


# ---------------------------------------------------------------------------
# Featurized datasets
# ---------------------------------------------------------------------------

@dataclass
class FeaturizedDataset:
    """Uncropped mel spectrograms (65-130 columns each) plus labels/subjects."""

    spectrograms: list[np.ndarray]  # each (100, W_i) float32
    labels: np.ndarray              # (N,) int64 class indices
    subject_ids: list[str]
    floor_db: float = FLOOR_DB

    def __len__(self) -> int:
        return len(self.spectrograms)

    def cnn_inputs(self, transform: WindowTransform) -> np.ndarray:
        """Stack all spectrograms at the transform's fixed width: (N, 1, 100, W)."""
        width = transform.output_columns
        out = np.empty((len(self), 1, 100, width), dtype=np.float32)
        for i, values in enumerate(self.spectrograms):
            spec = MelSpectrogram(values=values.astype(np.float64), floor_db=self.floor_db)
            out[i, 0] = window_transform(spec, transform).values.astype(np.float32)
        return out

    def baseline_features(self, kind: FeatureKind) -> np.ndarray:
        """Energy-sum vectors computed from the centre-cropped spectrograms."""
        out = np.empty((len(self), kind.value), dtype=np.float32)
        for i, values in enumerate(self.spectrograms):
            spec = MelSpectrogram(values=values.astype(np.float64), floor_db=self.floor_db)
            cropped = window_transform(spec, WindowTransform.CROP)
            if kind is FeatureKind.TIME_ENERGY:
                out[i] = time_energy_features(cropped).values.astype(np.float32)
            else:
                out[i] = freq_energy_features(cropped).values.astype(np.float32)
        return out


def featurize_clips(pairs: Iterable[tuple[GestureRecord, AudioClip]]) -> FeaturizedDataset:
    """Mel-spectrogram every clip (resampling to 44.1 kHz when needed)."""
    spectrograms: list[np.ndarray] = []
    labels: list[int] = []
    subjects: list[str] = []
    for record, clip in pairs:
        if clip.sample_rate_hz != TARGET_SAMPLE_RATE:
            clip = resample(clip, TARGET_SAMPLE_RATE)
        spectrograms.append(mel_spectrogram(clip).values.astype(np.float32))
        labels.append(record.label.index)
        subjects.append(record.subject_id)
    return FeaturizedDataset(
        spectrograms=spectrograms,
        labels=np.asarray(labels, dtype=np.int64),
        subject_ids=subjects,
    )


def featurize_manifest(manifest: DatasetManifest, root: str | Path) -> FeaturizedDataset:
    root = Path(root)
    return featurize_clips(
        (record, read_wav(root / record.clip_path)) for record in manifest.records
    )


def save_dataset(path: str | Path, dataset: FeaturizedDataset) -> None:
    descriptor = {
        "kind": "featurized_dataset",
        "labels": [int(v) for v in dataset.labels],
        "subjects": dataset.subject_ids,
        "floor_db": dataset.floor_db,
    }
    with open(path, "wb") as fh:
        write_container(fh, descriptor, dataset.spectrograms)


def load_dataset(path: str | Path) -> FeaturizedDataset:
    with open(path, "rb") as fh:
        descriptor, tensors = read_container(fh)
    if descriptor.get("kind") != "featurized_dataset":
        raise InvalidParams(f"{path} is not a featurized dataset")
    return FeaturizedDataset(
        spectrograms=tensors,
        labels=np.asarray(descriptor["labels"], dtype=np.int64),
        subject_ids=list(descriptor["subjects"]),
        floor_db=float(descriptor["floor_db"]),
    )


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train, self.validation, self.test)]
        object.__setattr__(self, "train", parts[0])
        object.__setattr__(self, "validation", parts[1])
        object.__setattr__(self, "test", parts[2])
        merged = np.concatenate(parts)
        if len(np.unique(merged)) != len(merged):
            raise ValueError("split partitions overlap")


def split_random(n: int, seed: int) -> SplitAssignment:
    """Seeded shuffle, then 60/15/25 (floor/floor/remainder)."""
    if n < 20:
        raise DatasetTooSmall(f"need at least 20 records, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * TRAIN_FRACTION)
    n_val = int(n * VALIDATION_FRACTION)
    return SplitAssignment(
        train=perm[:n_train],
        validation=perm[n_train : n_train + n_val],
        test=perm[n_train + n_val :],
    )


def split_by_subject(subject_ids: Sequence[str], test_subjects: set[str],
                     validation_subjects: set[str]) -> SplitAssignment:
    """Assign every record by its subject; no subject straddles partitions."""
    test_subjects = set(test_subjects)
    validation_subjects = set(validation_subjects)
    if not test_subjects or not validation_subjects:
        raise InvalidParams("test and validation subject sets must be non-empty")
    overlap = test_subjects & validation_subjects
    if overlap:
        raise OverlappingSubjectSets(f"subjects in both sets: {sorted(overlap)}")
    known = set(subject_ids)
    unknown = (test_subjects | validation_subjects) - known
    if unknown:
        raise UnknownSubject(f"subjects not in manifest: {sorted(unknown)}")

    train, validation, test = [], [], []
    for i, sid in enumerate(subject_ids):
        if sid in test_subjects:
            test.append(i)
        elif sid in validation_subjects:
            validation.append(i)
        else:
            train.append(i)
    if not train:
        raise DatasetTooSmall("subject split leaves the training partition empty")
    return SplitAssignment(train=np.array(train), validation=np.array(validation),
                           test=np.array(test))


# ---------------------------------------------------------------------------
# Configs and training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    learning_rate: float
    batch_size: int
    kernels: int
    transform: WindowTransform
    epochs: int = DEFAULT_EPOCHS

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.kernels < 1 or self.epochs < 1:
            raise InvalidParams("config values must be positive")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "kernels": self.kernels,
            "transform": self.transform.value,
            "epochs": self.epochs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(
            seed=int(data["seed"]),
            learning_rate=float(data["learning_rate"]),
            batch_size=int(data["batch_size"]),
            kernels=int(data["kernels"]),
            transform=WindowTransform.from_name(str(data["transform"])),
            epochs=int(data.get("epochs", DEFAULT_EPOCHS)),
        )


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    validation_accuracy: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)


def _predict_batched(model: Model, x: np.ndarray) -> np.ndarray:
    """Eval-mode probabilities, chunked to bound conv memory."""
    chunks = [
        softmax(model.forward(x[i : i + _EVAL_BATCH], train=False))
        for i in range(0, len(x), _EVAL_BATCH)
    ]
    return np.concatenate(chunks, axis=0)


def _accuracy_of(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(_predict_batched(model, x).argmax(axis=1) == y))


def _run_training(model: Model, optimizer_step, x: np.ndarray, y: np.ndarray,
                  split: SplitAssignment, epochs: int, batch_size: int,
                  shuffle_seed_key: list[int]) -> TrainHistory:
    """Shared mini-batch loop; optimizer_step(params) applies one update."""
    x_train, y_train = x[split.train], y[split.train]
    x_val, y_val = x[split.validation], y[split.validation]

    mean = x_train.astype(np.float64).mean(axis=0 if x_train.ndim == 2 else None)
    std = x_train.astype(np.float64).std(axis=0 if x_train.ndim == 2 else None)
    model.set_input_stats(np.atleast_1d(mean), np.atleast_1d(std))

    rng = np.random.default_rng(shuffle_seed_key)
    history = TrainHistory()
    params = model.parameters()
    n = len(x_train)
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            # a diverging run overflows inside the layers before the loss
            # check fires; those warnings are expected, not actionable
            with np.errstate(over="ignore", invalid="ignore"):
                logits = model.forward(x_train[idx], train=True)
                loss, probs = softmax_cross_entropy(logits, y_train[idx])
            if not math.isfinite(loss):
                raise NumericalDivergence(f"loss became {loss} during training")
            model.backward(softmax_cross_entropy_grad(probs, y_train[idx]).astype(np.float32))
            optimizer_step(params)
            losses.append(loss)
        history.train_loss.append(float(np.mean(losses)))
        history.train_accuracy.append(_accuracy_of(model, x_train, y_train))
        history.validation_accuracy.append(_accuracy_of(model, x_val, y_val))
    return history


def train(config: ExperimentConfig, dataset: FeaturizedDataset,
          split: SplitAssignment) -> tuple[Model, TrainHistory]:
    """Train the gesture CNN with SGD per the config; never touches split.test."""
    x = dataset.cnn_inputs(config.transform)
    model = build_cnn(config.kernels, config.transform.output_columns, seed=config.seed)
    history = _run_training(
        model,
        lambda params: sgd_step(params, config.learning_rate),
        x,
        dataset.labels,
        split,
        config.epochs,
        config.batch_size,
        shuffle_seed_key=[config.seed, 1],
    )
    return model, history


def train_baseline(kind: FeatureKind, dataset: FeaturizedDataset, split: SplitAssignment,
                   seed: int, learning_rate: float = 1e-3, batch_size: int = 48,
                   epochs: int = DEFAULT_EPOCHS) -> tuple[Model, TrainHistory]:
    """Train one of the two energy-feature MLP baselines with Adam."""
    x = dataset.baseline_features(kind)
    model = build_mlp(kind.value, seed=seed)
    adam = AdamState(model.parameters())
    history = _run_training(
        model,
        lambda params: adam_step(adam, learning_rate),
        x,
        dataset.labels,
        split,
        epochs,
        batch_size,
        shuffle_seed_key=[seed, 1],
    )
    return model, history


def evaluate_split(model: Model, dataset: FeaturizedDataset, split_indices: np.ndarray,
                   transform: WindowTransform | None = None,
                   kind: FeatureKind | None = None) -> MetricsReport:
    """Evaluate a trained model on the given record indices."""
    if kind is not None:
        x = dataset.baseline_features(kind)
    else:
        if transform is None:
            raise InvalidParams("need a transform for CNN evaluation")
        x = dataset.cnn_inputs(transform)
    probs = _predict_batched(model, x[split_indices])
    truth = dataset.labels[split_indices]
    return evaluate_predictions(truth, probs.argmax(axis=1), probs)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class GridEntry:
    index: int
    config: ExperimentConfig
    status: str  # "ok" or "diverged"
    validation_accuracy: float  # nan when diverged
    checkpoint_path: str | None = None


@dataclass
class GridSearchResult:
    entries: list[GridEntry]
    ranking: list[int]           # entry indices, best first; diverged entries last
    best_index: int | None
    best_model: Model | None
    best_history: TrainHistory | None
    test_accuracy: float | None

    def format_table(self) -> str:
        lines = ["index\tseed\tlearning_rate\tbatch_size\tkernels\ttransform\tstatus"
                 "\tval_accuracy\ttest_accuracy\tcheckpoint"]
        for e in self.entries:
            c = e.config
            test = f"{self.test_accuracy:.4f}" if e.index == self.best_index \
                and self.test_accuracy is not None else ""
            val = f"{e.validation_accuracy:.4f}" if e.status == "ok" else ""
            lines.append(
                f"{e.index}\t{c.seed}\t{c.learning_rate}\t{c.batch_size}\t{c.kernels}"
                f"\t{c.transform.value}\t{e.status}\t{val}\t{test}\t{e.checkpoint_path or ''}"
            )
        return "\n".join(lines)


def enumerate_grid(
    seeds: Sequence[int] = STOCK_SEEDS,
    learning_rates: Sequence[float] = STOCK_LEARNING_RATES,
    batch_sizes: Sequence[int] = STOCK_BATCH_SIZES,
    kernel_counts: Sequence[int] = STOCK_KERNEL_COUNTS,
    transforms: Sequence[WindowTransform] = tuple(WindowTransform),
    epochs: int = DEFAULT_EPOCHS,
) -> list[ExperimentConfig]:
    """Cartesian product in a fixed axis order (seed, lr, batch, kernels, transform)."""
    return [
        ExperimentConfig(seed=s, learning_rate=lr, batch_size=b, kernels=k,
                         transform=t, epochs=epochs)
        for s, lr, b, k, t in itertools.product(
            seeds, learning_rates, batch_sizes, kernel_counts, transforms
        )
    ]


def rank_entries(entries: list[GridEntry]) -> list[int]:
    """Indices sorted by validation accuracy, best first.

    Ties resolve to the earlier config index; diverged runs sort last (also
    by index). A pure function of the per-config accuracies.
    """
    return sorted(
        range(len(entries)),
        key=lambda i: (entries[i].status != "ok",
                       -(entries[i].validation_accuracy if entries[i].status == "ok" else 0.0),
                       i),
    )


def _grid_worker(args: tuple) -> tuple[int, str, float, str | None]:
    index, config, dataset, split, checkpoint_dir = args
    try:
        model, history = train(config, dataset, split)
    except NumericalDivergence:
        return index, "diverged", float("nan"), None
    path = None
    if checkpoint_dir is not None:
        path = str(Path(checkpoint_dir) / f"config_{index:03d}.ckpt")
        save_checkpoint(model, path, train_config=config.to_dict())
    return index, "ok", history.validation_accuracy[-1], path


def grid_search(space: Sequence[ExperimentConfig], dataset: FeaturizedDataset,
                split: SplitAssignment, jobs: int = 1,
                checkpoint_dir: str | Path | None = None) -> GridSearchResult:
    """Train every config, rank by final validation accuracy, test the winner.

    Divergent runs are recorded and ranked last rather than aborting the
    sweep. The winning config is retrained in-process (training is
    deterministic, so this reproduces the worker's model exactly) and its test
    accuracy is the only test-set evaluation performed.
    """
    if not space:
        raise InvalidParams("grid space must be non-empty")
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    tasks = [(i, cfg, dataset, split, checkpoint_dir) for i, cfg in enumerate(space)]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_grid_worker, tasks))
    else:
        raw = [_grid_worker(t) for t in tasks]
    raw.sort(key=lambda r: r[0])  # merge in config-index order regardless of scheduling

    entries = [
        GridEntry(index=i, config=space[i], status=status,
                  validation_accuracy=val, checkpoint_path=path)
        for i, status, val, path in raw
    ]
    ranking = rank_entries(entries)
    best_index = next((i for i in ranking if entries[i].status == "ok"), None)
    best_model = best_history = test_accuracy = None
    if best_index is not None:
        best_model, best_history = train(space[best_index], dataset, split)
        report = evaluate_split(best_model, dataset, split.test,
                                transform=space[best_index].transform)
        test_accuracy = report.accuracy
    return GridSearchResult(entries=entries, ranking=ranking, best_index=best_index,
                            best_model=best_model, best_history=best_history,
                            test_accuracy=test_accuracy)


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

@dataclass
class TransformStudyRow:
    transform: WindowTransform
    best_config: ExperimentConfig | None
    test_accuracy: float | None


def run_transform_study(
    dataset: FeaturizedDataset,
    split: SplitAssignment,
    seeds: Sequence[int] = (6,),
    learning_rates: Sequence[float] = (0.1,),
    batch_sizes: Sequence[int] = (48,),
    kernel_counts: Sequence[int] = (8,),
    epochs: int = DEFAULT_EPOCHS,
    jobs: int = 1,
) -> list[TransformStudyRow]:
    """Best test accuracy per window transform over the given sweep axes."""
    rows = []
    for transform in WindowTransform:
        space = enumerate_grid(seeds, learning_rates, batch_sizes, kernel_counts,
                               transforms=(transform,), epochs=epochs)
        result = grid_search(space, dataset, split, jobs=jobs)
        best = space[result.best_index] if result.best_index is not None else None
        rows.append(TransformStudyRow(transform=transform, best_config=best,
                                      test_accuracy=result.test_accuracy))
    return rows


def format_transform_table(rows: list[TransformStudyRow]) -> str:
    lines = ["transform\ttest_accuracy\tseed\tlearning_rate\tbatch_size\tkernels"]
    for row in rows:
        if row.best_config is None:
            lines.append(f"{row.transform.value}\t(all runs diverged)\t\t\t\t")
        else:
            c = row.best_config
            lines.append(
                f"{row.transform.value}\t{row.test_accuracy:.4f}\t{c.seed}"
                f"\t{c.learning_rate}\t{c.batch_size}\t{c.kernels}"
            )
    return "\n".join(lines)


@dataclass
class CalibrationReport:
    random_split: MetricsReport
    subject_split: MetricsReport
    test_subjects: list[str]
    validation_subjects: list[str]

    @property
    def accuracy_gap(self) -> float:
        """Random-split accuracy minus subject-split accuracy."""
        return self.random_split.accuracy - self.subject_split.accuracy


def choose_subject_split(subject_ids: Sequence[str], n_test: int, n_validation: int,
                         seed: int) -> tuple[set[str], set[str]]:
    """Deterministically pick disjoint test/validation subject sets."""
    unique: list[str] = []
    for sid in subject_ids:
        if sid not in unique:
            unique.append(sid)
    if n_test < 1 or n_validation < 1 or n_test + n_validation >= len(unique):
        raise DatasetTooSmall(
            f"cannot reserve {n_test} test + {n_validation} validation subjects"
            f" out of {len(unique)}"
        )
    order = np.random.default_rng([seed, 2]).permutation(len(unique))
    chosen = [unique[i] for i in order]
    return set(chosen[:n_test]), set(chosen[n_test : n_test + n_validation])


def run_calibration_study(
    dataset: FeaturizedDataset,
    config: ExperimentConfig,
    n_test_subjects: int,
    n_validation_subjects: int,
    subject_seed: int = 0,
) -> CalibrationReport:
    """Same hyperparameters, two splits: seeded-random vs. subject-by-subject."""
    unique_subjects = set(dataset.subject_ids)
    if len(unique_subjects) < 4:
        raise DatasetTooSmall(f"calibration study needs >= 4 subjects, got {len(unique_subjects)}")

    random_split = split_random(len(dataset), config.seed)
    model_r, _ = train(config, dataset, random_split)
    report_r = evaluate_split(model_r, dataset, random_split.test, transform=config.transform)

    test_subjects, val_subjects = choose_subject_split(
        dataset.subject_ids, n_test_subjects, n_validation_subjects, subject_seed
    )
    subject_split = split_by_subject(dataset.subject_ids, test_subjects, val_subjects)
    model_s, _ = train(config, dataset, subject_split)
    report_s = evaluate_split(model_s, dataset, subject_split.test, transform=config.transform)

    return CalibrationReport(
        random_split=report_r,
        subject_split=report_s,
        test_subjects=sorted(test_subjects),
        validation_subjects=sorted(val_subjects),
    )


# ---------------------------------------------------------------------------
# Experiment config files: key = value, with [a, b, c] lists for sweep axes
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"seed", "learning_rate", "batch_size", "kernels", "transform", "epochs"}


def parse_config_file(path: str | Path) -> dict[str, list]:
    """Parse a sweep definition; every key maps to a list of candidate values."""
    axes: dict[str, list] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParams(f"{path}:{line_no}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise InvalidParams(f"{path}:{line_no}: unknown key {key!r}")
        value = value.strip()
        if value.startswith("[") and value.endswith("]"):
            items = [v.strip() for v in value[1:-1].split(",") if v.strip()]
        else:
            items = [value]
        axes[key] = [_parse_config_value(key, v) for v in items]
    return axes


def _parse_config_value(key: str, value: str):
    if key in ("seed", "batch_size", "kernels", "epochs"):
        return int(value)
    if key == "learning_rate":
        return float(value)
    return WindowTransform.from_name(value)


def grid_from_axes(axes: dict[str, list],
                   transform_override: WindowTransform | None = None) -> list[ExperimentConfig]:
    """Build the sweep from parsed config axes, filling gaps with stock values."""
    transforms = [transform_override] if transform_override is not None \
        else axes.get("transform", list(WindowTransform))
    epochs_values = axes.get("epochs", [DEFAULT_EPOCHS])
    if len(epochs_values) != 1:
        raise InvalidParams("epochs cannot be a sweep axis")
    return enumerate_grid(
        seeds=axes.get("seed", STOCK_SEEDS),
        learning_rates=axes.get("learning_rate", STOCK_LEARNING_RATES),
        batch_sizes=axes.get("batch_size", STOCK_BATCH_SIZES),
        kernel_counts=axes.get("kernels", STOCK_KERNEL_COUNTS),
        transforms=transforms,
        epochs=epochs_values[0],
    )
