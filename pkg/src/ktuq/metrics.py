"""Multi-class point-estimate metrics: accuracy, macro F1, one-vs-rest AUC.

F1 is macro-averaged over every class in the confusion matrix; a class with
no predicted and no true instances contributes 0, which is what drags macro
F1 far below accuracy on option-imbalanced data. AUC is rank-based (ties
averaged) per class one-vs-rest, macro-averaged over the classes for which
it is defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .validation import ValidationError


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    macro_f1: float
    macro_ovr_auc: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    confusion: np.ndarray
    n_predictions: int


def confusion_matrix(truth, predicted, n_classes: int = 4) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    truth = np.asarray(truth, dtype=np.int64).ravel()
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    if truth.shape != predicted.shape:
        raise ValidationError(
            f"truth and predictions differ in length: {truth.shape} vs {predicted.shape}"
        )
    if truth.size == 0:
        raise ValidationError("cannot build a confusion matrix from zero predictions")
    for name, labels in (("truth", truth), ("predicted", predicted)):
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValidationError(f"{name} labels must lie in 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return counts


def accuracy_from_confusion(confusion: np.ndarray) -> float:
    return float(np.trace(confusion) / confusion.sum())


def precision_recall(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall; empty denominators yield 0."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
    return precision, recall


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over every class in the matrix."""
    precision, recall = precision_recall(confusion)
    denom = precision + recall
    with np.errstate(invalid="ignore"):
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return float(f1.mean())


def one_vs_rest_auc(scores: np.ndarray, truth) -> tuple[np.ndarray, float]:
    """Rank-based AUC per class (nan where undefined) and their macro mean.

    A class lacking either positives or negatives has no defined AUC and is
    excluded from the mean; tied scores receive averaged ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if scores.ndim != 2 or scores.shape[0] != truth.size:
        raise ValidationError(
            f"scores must be (n_predictions, n_classes), got shape {scores.shape}"
        )
    n, k = scores.shape
    per_class = np.full(k, np.nan)
    for label in range(k):
        positive = truth == label
        n_pos = int(positive.sum())
        n_neg = n - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, label])
        rank_sum = float(ranks[positive].sum())
        per_class[label] = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    defined = ~np.isnan(per_class)
    if not defined.any():
        raise ValidationError("AUC is undefined: the truth labels contain a single class")
    return per_class, float(per_class[defined].mean())


def metrics_report(scores: np.ndarray, truth, n_classes: int = 4) -> MetricsReport:
    """Score matrix + true labels -> full report; predictions are argmax."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != n_classes:
        raise ValidationError(
            f"scores must be (n_predictions, {n_classes}), got shape {scores.shape}"
        )
    predicted = np.argmax(scores, axis=-1)
    confusion = confusion_matrix(truth, predicted, n_classes)
    precision, recall = precision_recall(confusion)
    _, auc = one_vs_rest_auc(scores, truth)
    return MetricsReport(
        accuracy=accuracy_from_confusion(confusion),
        macro_f1=macro_f1(confusion),
        macro_ovr_auc=auc,
        per_class_precision=precision,
        per_class_recall=recall,
        confusion=confusion,
        n_predictions=int(confusion.sum()),
    )
