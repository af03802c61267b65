"""Classification metrics: accuracy, confusion matrix, ROC curves, AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_core import CLASS_NAMES, NUM_CLASSES
from .errors import EmptyInput, InvalidLabel, LengthMismatch, SingleClassInput


@dataclass(frozen=True)
class ConfusionMatrix:
    """6x6 counts; rows are ground truth, columns are predictions."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(counts < 0):
            raise ValueError("confusion matrix must be 6x6 with non-negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def format_table(self) -> str:
        width = max(len(n) for n in CLASS_NAMES)
        head = " " * (width + 1) + "\t".join(f"{n:>{width}}" for n in CLASS_NAMES)
        rows = [head]
        for name, row in zip(CLASS_NAMES, self.counts):
            rows.append(f"{name:>{width}} " + "\t".join(f"{v:>{width}}" for v in row))
        return "\n".join(rows)


@dataclass(frozen=True)
class RocCurve:
    """Operating points (FPR, TPR) swept from the +inf threshold downwards."""

    points: np.ndarray  # (n, 2) array of (false positive rate, true positive rate)
    class_index: int = 0

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", points)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("curve must be an (n, 2) array")
        if not (np.all(points >= -1e-12) and np.all(points <= 1 + 1e-12)):
            raise ValueError("curve points must lie in the unit square")
        if np.any(np.diff(points[:, 0]) < -1e-12) or np.any(np.diff(points[:, 1]) < -1e-12):
            raise ValueError("curve coordinates must be non-decreasing")
        if not (np.allclose(points[0], (0.0, 0.0)) and np.allclose(points[-1], (1.0, 1.0))):
            raise ValueError("curve must start at (0,0) and end at (1,1)")


def accuracy(truth: np.ndarray, predicted: np.ndarray) -> float:
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"{truth.shape} vs {predicted.shape}")
    if truth.size == 0:
        raise EmptyInput("accuracy of zero samples is undefined")
    return float(np.mean(truth == predicted))


def confusion_matrix(truth: np.ndarray, predicted: np.ndarray) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"{truth.shape} vs {predicted.shape}")
    for arr in (truth, predicted):
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
            raise InvalidLabel(f"labels must lie in [0, {NUM_CLASSES})")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return ConfusionMatrix(counts=counts)


def roc_curve(scores: np.ndarray, truth: np.ndarray, class_index: int = 0) -> RocCurve:
    """One-vs-rest ROC: sweep a threshold over the distinct scores.

    `truth` is the binary is-this-class indicator. Tied scores collapse into a
    single threshold step, which makes the trapezoidal area match the
    Wilcoxon pair statistic with ties counted one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise LengthMismatch(f"{scores.shape} vs {truth.shape}")
    n_pos = int(truth.sum())
    n_neg = int(truth.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("ROC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    tp = np.cumsum(sorted_truth)
    fp = np.cumsum(~sorted_truth)
    # keep only the last point of each tied-score group
    last_of_group = np.append(np.diff(sorted_scores) != 0, True)
    points = np.empty((int(last_of_group.sum()) + 1, 2))
    points[0] = (0.0, 0.0)
    points[1:, 0] = fp[last_of_group] / n_neg
    points[1:, 1] = tp[last_of_group] / n_pos
    return RocCurve(points=points, class_index=class_index)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    x = curve.points[:, 0]
    y = curve.points[:, 1]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def one_vs_rest_curves(probabilities: np.ndarray, labels: np.ndarray) -> dict[int, RocCurve]:
    """Per-class ROC curves from 6-way probabilities; absent classes skipped."""
    curves: dict[int, RocCurve] = {}
    labels = np.asarray(labels)
    for c in range(NUM_CLASSES):
        is_c = labels == c
        if is_c.any() and (~is_c).any():
            curves[c] = roc_curve(probabilities[:, c], is_c, class_index=c)
    return curves


@dataclass
class MetricsReport:
    """Evaluation results for one model on one split."""

    accuracy: float
    confusion: ConfusionMatrix
    aucs: dict[int, float] = field(default_factory=dict)

    def format_table(self) -> str:
        lines = [f"accuracy\t{self.accuracy:.4f}"]
        for c, value in sorted(self.aucs.items()):
            lines.append(f"auc_{CLASS_NAMES[c]}\t{value:.4f}")
        lines.append("")
        lines.append(self.confusion.format_table())
        return "\n".join(lines)


def evaluate_predictions(truth: np.ndarray, predicted: np.ndarray,
                         probabilities: np.ndarray | None = None) -> MetricsReport:
    report = MetricsReport(
        accuracy=accuracy(truth, predicted),
        confusion=confusion_matrix(truth, predicted),
    )
    if probabilities is not None:
        report.aucs = {
            c: auc(curve) for c, curve in one_vs_rest_curves(probabilities, truth).items()
        }
    return report


def write_curve_points(path: str | Path, curve: RocCurve) -> None:
    """Two whitespace-separated columns per line: FPR TPR."""
    lines = [f"{fpr:.6f} {tpr:.6f}" for fpr, tpr in curve.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
