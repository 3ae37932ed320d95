"""
Agreement metrics between attribution vectors.

Rankings break ties by ascending document index everywhere.
"""

from collections.abc import Collection, Sequence

import numpy as np
from scipy import stats

from fastattribution.exceptions import BoundsError, UndefinedCorrelationError
from fastattribution.models import DocumentLabel


Scores = Sequence[float] | np.ndarray


def _pair(a: Scores, b: Scores) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise BoundsError(f"score vectors must be one-dimensional and equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise BoundsError("correlations need at least two scores")
    return x, y


def pearson(a: Scores, b: Scores) -> float:
    """
    Pearson correlation of raw scores.

    Raises:
        UndefinedCorrelationError: If either input is constant.
    """
    x, y = _pair(a, b)
    dx = x - x.mean()
    dy = y - y.mean()
    norm = float(np.sqrt((dx @ dx) * (dy @ dy)))
    if norm == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant score vector")
    return float(np.clip((dx @ dy) / norm, -1.0, 1.0))


def rank(scores: Scores) -> np.ndarray:
    """Ascending ranks from 1, ties sharing their average rank."""
    return stats.rankdata(np.asarray(scores, dtype=float), method="average")


def spearman(a: Scores, b: Scores) -> float:
    """
    Spearman correlation: Pearson correlation of average-tie ranks.

    Raises:
        UndefinedCorrelationError: If either input is constant.
    """
    x, y = _pair(a, b)
    return pearson(rank(x), rank(y))


def kendall_tau(a: Scores, b: Scores) -> float:
    """
    Kendall tau-b (tie corrected).

    Raises:
        UndefinedCorrelationError: If either input is entirely tied.
    """
    x, y = _pair(a, b)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("kendall tau undefined when every score is tied")
    tau, _ = stats.kendalltau(x, y)
    if not np.isfinite(tau):
        raise UndefinedCorrelationError("kendall tau undefined for these inputs")
    return float(tau)


def top_k(scores: Scores, k: int) -> tuple[int, ...]:
    """
    Indices of the k highest scores, ties to the lower index.

    Raises:
        BoundsError: If k is outside [1, n].
    """
    values = np.asarray(scores, dtype=float)
    if not 1 <= k <= values.size:
        raise BoundsError(f"k must be in [1, {values.size}], got {k}")
    return tuple(int(i) for i in np.argsort(-values, kind="stable")[:k])


def precision_at_k(pred: Scores, ref: Scores, k: int) -> float:
    """|top_k(pred) ∩ top_k(ref)| / k."""
    if len(pred) != len(ref):
        raise BoundsError("score vectors must have equal length")
    return len(set(top_k(pred, k)) & set(top_k(ref, k))) / k


def set_precision(pred: Scores, members: Collection[int], k: int) -> float:
    """|top_k(pred) ∩ members| / k, e.g. against an exhaustive impact set."""
    return len(set(top_k(pred, k)) & set(members)) / k


def min_max_normalize(scores: Scores) -> np.ndarray | None:
    """Scores mapped onto [0, 1]; None when every score is equal."""
    values = np.asarray(scores, dtype=float)
    low, high = float(values.min()), float(values.max())
    if high - low <= 0.0:
        return None
    return (values - low) / (high - low)


def label_mass(scores: Scores, labels: Sequence[DocumentLabel]) -> dict[DocumentLabel, float]:
    """Share of total absolute attribution carried by each label present."""
    values = np.abs(np.asarray(scores, dtype=float))
    total = float(values.sum())
    mass: dict[DocumentLabel, float] = {}
    for label in dict.fromkeys(labels):
        chosen = [i for i, item in enumerate(labels) if item is label]
        mass[label] = float(values[chosen].sum()) / total if total > 0 else 0.0
    return mass
