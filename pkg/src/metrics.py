"""
Classification metrics for the credit fusion framework.
Weighted one-vs-rest AUC, F1, confusion matrices and percentile bootstrap
confidence intervals. Class labels are 1..K; probability column j holds
class j + 1.
"""

import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger("credit_fusion.metrics")

F1_AVERAGES = ("weighted", "macro", "micro")
MAX_SKIPPED_FRACTION = 0.5


class MetricError(ValueError):
    """Raised when a metric is undefined for its inputs."""


def _check_lengths(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if len(a) != len(b):
        raise MetricError(f"{what}: length mismatch ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise MetricError(f"{what}: no samples")


def auc_binary(scores, labels) -> float:
    """
    Mann-Whitney AUC: probability that a random positive outranks a random negative.

    Ties count one half (average ranks).

    Args:
        scores: Real scores, higher means more positive
        labels: 0/1 labels

    Returns:
        AUC in [0, 1]

    Raises:
        MetricError: If only one label value is present
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    _check_lengths(scores, labels, "auc_binary")
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise MetricError("auc_binary needs both positive and negative labels")
    ranks = rankdata(scores)
    rank_sum = ranks[labels].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def _check_probabilities(probabilities: np.ndarray, labels: np.ndarray) -> None:
    if probabilities.ndim != 2:
        raise MetricError(f"probabilities must be [samples x classes], got shape {probabilities.shape}")
    _check_lengths(probabilities, labels, "auc_weighted_ovr")
    if not np.allclose(probabilities.sum(axis=1), 1.0, atol=1e-4):
        raise MetricError("probability rows must sum to 1")
    if labels.min() < 1 or labels.max() > probabilities.shape[1]:
        raise MetricError(f"labels must lie in 1..{probabilities.shape[1]}")


def per_class_auc(probabilities, labels) -> Dict[int, float]:
    """
    One-vs-rest AUC per class; classes without both positives and negatives map to NaN.

    Args:
        probabilities: [samples x classes]
        labels: Classes 1..K

    Returns:
        {class: auc}
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_probabilities(probabilities, labels)
    result = {}
    for column in range(probabilities.shape[1]):
        positive = labels == column + 1
        if positive.all() or not positive.any():
            result[column + 1] = float('nan')
        else:
            result[column + 1] = auc_binary(probabilities[:, column], positive)
    return result


def auc_weighted_ovr(probabilities, labels) -> float:
    """
    Support-weighted mean of the one-vs-rest AUCs of the classes present in labels.

    Raises:
        MetricError: If no class has both positives and negatives
    """
    labels = np.asarray(labels, dtype=np.int64)
    aucs = per_class_auc(probabilities, labels)
    defined = [c for c, value in aucs.items() if not np.isnan(value)]
    if not defined:
        raise MetricError("weighted AUC is undefined: every sample has the same class")
    support = np.array([np.sum(labels == c) for c in defined], dtype=np.float64)
    values = np.array([aucs[c] for c in defined])
    return float(np.sum(values * support) / support.sum())


def confusion_matrix(predictions, labels, classes: int) -> np.ndarray:
    """
    Counts of true class i (row) predicted as class j (column), classes 1..classes.

    Raises:
        MetricError: On a value outside 1..classes
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(predictions) != len(labels):
        raise MetricError(f"confusion_matrix: length mismatch ({len(predictions)} vs {len(labels)})")
    for name, values in (("predictions", predictions), ("labels", labels)):
        if values.size and (values.min() < 1 or values.max() > classes):
            raise MetricError(f"{name} must lie in 1..{classes}")
    matrix = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(matrix, (labels - 1, predictions - 1), 1)
    return matrix


def row_normalized(confusion: np.ndarray) -> np.ndarray:
    """Rows as percentages of their support; empty rows stay zero."""
    confusion = np.asarray(confusion, dtype=np.float64)
    support = confusion.sum(axis=1, keepdims=True)
    return np.divide(100.0 * confusion, support, out=np.zeros_like(confusion), where=support > 0)


def f1_from_confusion(confusion: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-class F1 = 2TP / (2TP + FP + FN).

    Returns:
        (f1 per class, mask of classes where the ratio is 0/0 and F1 is set to 0)
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denominator = 2 * tp + fp + fn
    undefined = denominator == 0
    return np.divide(2 * tp, denominator, out=np.zeros_like(tp), where=~undefined), undefined


def f1_weighted(predictions, labels, average: str = "weighted", classes: Optional[int] = None) -> float:
    """
    Multi-class F1.

    Args:
        predictions: Predicted classes 1..K
        labels: True classes 1..K
        average: 'weighted' (support-weighted), 'macro' or 'micro'
        classes: Number of classes (defaults to the largest class seen)

    Returns:
        F1 in [0, 1]

    Raises:
        MetricError: On a length mismatch or empty input
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_lengths(predictions, labels, "f1_weighted")
    if average not in F1_AVERAGES:
        raise ValueError(f"Unknown F1 average '{average}'. Use one of: {F1_AVERAGES}")
    classes = classes or int(max(predictions.max(), labels.max()))
    confusion = confusion_matrix(predictions, labels, classes)

    if average == "micro":
        tp = np.trace(confusion)
        errors = confusion.sum() - tp
        return float(2 * tp / (2 * tp + 2 * errors))

    scores, undefined = f1_from_confusion(confusion)
    support = confusion.sum(axis=1)
    if average == "weighted":
        zero_support = np.flatnonzero(support == 0) + 1
        if len(zero_support) and np.any(confusion.sum(axis=0)[support == 0] > 0):
            logger.warning(f"Classes {zero_support.tolist()} have no true samples and contribute 0 to weighted F1")
        return float(np.sum(scores * support) / support.sum())

    seen = (support > 0) | (confusion.sum(axis=0) > 0)
    if np.any(undefined & seen):
        logger.warning(f"F1 is 0/0 for classes {(np.flatnonzero(undefined & seen) + 1).tolist()}, counted as 0")
    return float(scores[seen].mean())


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    _check_lengths(predictions, labels, "accuracy")
    return float(np.mean(predictions == labels))


def bootstrap_ci(metric: Callable[..., float], data: Sequence[np.ndarray], resamples: int = 10000,
                 level: float = 0.90, seed: int = 0) -> Tuple[float, float]:
    """
    Percentile bootstrap confidence interval, resampling rows with replacement.

    Args:
        metric: Function of the row-aligned arrays in data
        data: Arrays sharing their first dimension (e.g. (probabilities, labels))
        resamples: Number of resamples, at least 100
        level: Confidence level in (0, 1)
        seed: Resampling seed

    Returns:
        (low, high)

    Raises:
        MetricError: If the metric is undefined on more than half of the resamples
    """
    if resamples < 100:
        raise ValueError(f"bootstrap needs at least 100 resamples, got {resamples}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    arrays = [np.asarray(a) for a in data]
    n = len(arrays[0])
    if n == 0 or any(len(a) != n for a in arrays):
        raise MetricError("bootstrap data must be nonempty and row-aligned")

    rng = np.random.default_rng(seed)
    values, skipped = [], 0
    for _ in range(resamples):
        rows = rng.integers(0, n, size=n)
        try:
            values.append(metric(*[a[rows] for a in arrays]))
        except MetricError:
            skipped += 1

    if skipped > MAX_SKIPPED_FRACTION * resamples:
        raise MetricError(f"metric undefined on {skipped} of {resamples} bootstrap resamples")
    if skipped:
        logger.warning(f"Skipped {skipped} of {resamples} bootstrap resamples where the metric is undefined")
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(np.asarray(values), [tail, 100.0 - tail])
    return float(low), float(high)
