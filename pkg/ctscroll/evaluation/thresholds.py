"""Per-label decision thresholds maximising validation F1."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.evaluation.metrics import as_binary

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass
class ThresholdChoice:
    threshold: float
    f1: float
    defaulted: bool = False


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct sorted scores, plus 0 and 1, ascending."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([[0.0], mids, [1.0]]))


def f1_at(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """F1 for every threshold at once (0 when undefined)."""
    pred = scores[None, :] >= thresholds[:, None]
    tp = (pred & labels[None, :]).sum(axis=1)
    fp = (pred & ~labels[None, :]).sum(axis=1)
    fn = (~pred & labels[None, :]).sum(axis=1)
    den = 2 * tp + fp + fn
    return np.divide(2 * tp, den, out=np.zeros(len(thresholds)), where=den > 0)


def select_threshold(scores_val: np.ndarray, labels_val: np.ndarray) -> ThresholdChoice:
    """Best-F1 candidate, smallest on ties; 0.5 (flagged) when there are no positives."""
    s, y = as_binary(scores_val, labels_val)
    if s.size == 0:
        raise ShapeError("Cannot select a threshold from an empty validation set")
    if not y.any():
        return ThresholdChoice(threshold=DEFAULT_THRESHOLD, f1=0.0, defaulted=True)
    candidates = candidate_thresholds(s)
    f1 = f1_at(s, y, candidates)
    best = int(np.argmax(f1))  # first maximum = smallest threshold
    return ThresholdChoice(threshold=float(candidates[best]), f1=float(f1[best]))


def select_thresholds(scores: np.ndarray, labels: np.ndarray, label_names: list[str]) -> list[ThresholdChoice]:
    """Column-wise `select_threshold` over an N×L validation set."""
    choices = []
    for j, name in enumerate(label_names):
        choice = select_threshold(scores[:, j], labels[:, j])
        if choice.defaulted:
            logger.warning("Label %s has no validation positives; threshold defaults to %.1f",
                           name, DEFAULT_THRESHOLD)
        choices.append(choice)
    return choices


class ThresholdFile(BaseModel):
    label_names: list[str]
    thresholds: list[float]
    defaulted: list[bool]


def write_thresholds(choices: list[ThresholdChoice], label_names: list[str], path: str | Path) -> Path:
    doc = ThresholdFile(
        label_names=list(label_names),
        thresholds=[c.threshold for c in choices],
        defaulted=[c.defaulted for c in choices],
    )
    out = Path(path)
    try:
        out.write_text(doc.model_dump_json(indent=2))
    except OSError as exc:
        raise VolumeIOError(f"Cannot write thresholds {out}: {exc}") from exc
    return out


def read_thresholds(path: str | Path) -> ThresholdFile:
    try:
        return ThresholdFile.model_validate(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise VolumeIOError(f"Cannot read thresholds {path}: {exc}") from exc
