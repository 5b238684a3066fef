"""Classification metrics: accuracy, macro precision/recall/F1, and
one-vs-rest AUC with midrank tie handling.

Macro averages run over classes that actually occur in the evaluated
labels; absent classes are reported in ``zero_support_classes`` instead of
polluting the mean.  A class nobody predicted gets precision 0 (flagged in
``zero_prediction_classes``) rather than NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

ConfusionMatrix = np.ndarray


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    auc_ovr_macro: float
    n_samples: int
    zero_support_classes: tuple[int, ...] = ()
    zero_prediction_classes: tuple[int, ...] = ()


def confusion(
    true_labels: np.ndarray, predicted_labels: np.ndarray, num_classes: int
) -> ConfusionMatrix:
    """Counts[t][p] over samples; rows are true classes, columns predictions."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise ShapeError(
            f"label arrays must be equal-length vectors, got "
            f"{true_labels.shape} and {predicted_labels.shape}"
        )
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ShapeError(f"{name} labels outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return counts


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _auc_one_vs_rest(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-statistic AUC of one class column against the rest."""
    ranks = _midranks(scores)
    n_pos = int(positives.sum())
    n_neg = len(scores) - n_pos
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def summarize(
    cm: ConfusionMatrix,
    scores: np.ndarray,
    true_labels: np.ndarray,
    average: str = "macro",
) -> Metrics:
    """Metrics from a confusion matrix plus per-sample class scores.

    ``average="micro"`` pools counts globally instead of averaging per
    class (for single-label data micro precision/recall both equal
    accuracy).  AUC is always the unweighted one-vs-rest mean over classes
    that have both positives and negatives; with no such class it falls
    back to chance level 0.5.
    """
    cm = np.asarray(cm)
    scores = np.asarray(scores, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    num_classes = cm.shape[0]
    if cm.shape != (num_classes, num_classes):
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    n = len(true_labels)
    if scores.shape != (n, num_classes):
        raise ShapeError(f"scores shape {scores.shape} does not match ({n}, {num_classes})")
    if int(cm.sum()) != n:
        raise ShapeError(f"confusion total {int(cm.sum())} does not match {n} labels")
    if average not in ("macro", "micro"):
        raise ConfigError(f"average must be 'macro' or 'micro', got {average!r}")
    if n == 0:
        raise ShapeError("cannot summarize an empty evaluation")

    diag = np.diag(cm).astype(np.float64)
    row_sums = cm.sum(axis=1).astype(np.float64)
    col_sums = cm.sum(axis=0).astype(np.float64)
    accuracy = float(diag.sum() / n)

    present = row_sums > 0
    zero_support = tuple(int(c) for c in np.flatnonzero(~present))
    zero_prediction = tuple(int(c) for c in np.flatnonzero(present & (col_sums == 0)))

    if average == "micro":
        precision = recall = accuracy
        f1 = accuracy
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            per_precision = np.where(col_sums > 0, diag / np.maximum(col_sums, 1), 0.0)
            per_recall = np.where(row_sums > 0, diag / np.maximum(row_sums, 1), 0.0)
            denom = per_precision + per_recall
            per_f1 = np.where(denom > 0, 2 * per_precision * per_recall / np.maximum(denom, 1e-300), 0.0)
        precision = float(per_precision[present].mean())
        recall = float(per_recall[present].mean())
        f1 = float(per_f1[present].mean())

    auc_values = []
    for c in range(num_classes):
        positives = true_labels == c
        n_pos = int(positives.sum())
        if 0 < n_pos < n:
            auc_values.append(_auc_one_vs_rest(scores[:, c], positives))
    auc = float(np.mean(auc_values)) if auc_values else 0.5

    return Metrics(
        accuracy=accuracy,
        precision_macro=precision,
        recall_macro=recall,
        f1_macro=f1,
        auc_ovr_macro=auc,
        n_samples=n,
        zero_support_classes=zero_support,
        zero_prediction_classes=zero_prediction,
    )


def write_metrics_json(metrics: Metrics, path) -> None:
    payload = {
        "accuracy": metrics.accuracy,
        "precision_macro": metrics.precision_macro,
        "recall_macro": metrics.recall_macro,
        "f1_macro": metrics.f1_macro,
        "auc_ovr_macro": metrics.auc_ovr_macro,
        "n_samples": metrics.n_samples,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    lines = [",".join(str(int(v)) for v in row) for row in np.asarray(cm)]
    Path(path).write_text("\n".join(lines) + "\n")
