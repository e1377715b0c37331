"""Threshold-free classification metrics and recall-targeted thresholds."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import groupby

import numpy as np

from .errors import UndefinedMetricError


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d sequences of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise UndefinedMetricError("metric is undefined when only one class is present")
    return scores, labels, n_pos


def _score_groups(scores, labels, descending):
    """Yield (n_pos, n_neg) per block of tied scores, sorted by score."""
    order = sorted(range(len(scores)), key=lambda i: scores[i], reverse=descending)
    for _, block in groupby(order, key=lambda i: scores[i]):
        block = list(block)
        p = sum(int(labels[i]) for i in block)
        yield p, len(block) - p


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half (Mann-Whitney U divided by ``n_pos * n_neg``).
    """
    scores, labels, n_pos = _check(scores, labels)
    n_neg = len(labels) - n_pos
    u = 0.0
    neg_below = 0
    for p, q in _score_groups(scores, labels, descending=False):
        u += p * neg_below + 0.5 * p * q
        neg_below += q
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Area under the precision-recall step curve.

    Sweeping thresholds from the highest score down, each distinct score adds
    ``(recall gain) * precision`` at that threshold (average precision).
    The sum is kept as an exact fraction and rounded once.
    """
    scores, labels, n_pos = _check(scores, labels)
    area = Fraction(0)
    tp = fp = 0
    for p, q in _score_groups(scores, labels, descending=True):
        tp += p
        fp += q
        if p:
            area += Fraction(p * tp, tp + fp)
    return float(area / n_pos)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    recall: float
    target_recall: float


def calibrate_threshold(scores, labels, target_recall: float) -> ThresholdResult:
    """Largest threshold whose recall reaches ``target_recall``.

    A note is predicted positive when ``score >= threshold``, so a target of
    1.0 is met at the minimum positive score.
    """
    if not 0.0 < target_recall <= 1.0:
        raise ValueError(f"target_recall must be in (0, 1], got {target_recall}")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("no positive examples to calibrate recall on")
    pos = np.sort(scores[labels == 1])[::-1]
    # taking the k highest positives gives recall k / n_pos
    k = int(np.ceil(target_recall * n_pos - 1e-9))
    k = min(max(k, 1), n_pos)
    thr = float(pos[k - 1])
    recall = float((pos >= thr).sum()) / n_pos
    return ThresholdResult(thr, recall, target_recall)


def recall_at(scores, labels, threshold: float) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("recall is undefined without positives")
    return float(((scores >= threshold) & (labels == 1)).sum()) / n_pos
