"""Per-label binary metrics: rank-based AUROC and thresholded confusion metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from ctscroll.errors import ShapeError

logger = logging.getLogger(__name__)


def as_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ShapeError("Labels must be binary")
    return s, y.astype(bool)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Mann–Whitney AUROC with average ranks for ties (a tie counts 0.5).

    Returns nan when the labels hold a single class.
    """
    s, y = as_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ConfusionMetrics:
    f1: float
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def confusion_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float) -> ConfusionMetrics:
    """Positive iff score ≥ threshold; 0/0 is 0 for precision, recall and F1."""
    s, y = as_binary(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    return ConfusionMetrics(
        f1=f1, precision=precision, recall=recall,
        accuracy=_ratio(tp + tn, y.size), tp=tp, fp=fp, fn=fn, tn=tn,
    )
