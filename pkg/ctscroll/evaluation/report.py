"""Prediction sets, per-label metrics at fixed thresholds, and the aggregate report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.evaluation.metrics import auroc, confusion_metrics

logger = logging.getLogger(__name__)

METRIC_KEYS = ("auroc", "f1", "precision", "recall", "accuracy")


@dataclass
class PredictionSet:
    """Sigmoid scores and binary labels, N × L."""

    scores: np.ndarray
    labels: np.ndarray
    label_names: list[str]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.scores.ndim != 2 or self.scores.shape != self.labels.shape:
            raise ShapeError(f"Scores {self.scores.shape} and labels {self.labels.shape} must be equal N×L")
        if self.scores.shape[1] != len(self.label_names):
            raise ShapeError(f"{self.scores.shape[1]} score columns but {len(self.label_names)} label names")
        if np.any((self.scores < 0) | (self.scores > 1)) or not np.all(np.isfinite(self.scores)):
            raise ShapeError("Scores must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ShapeError("Labels must be binary")
        if not self.ids:
            self.ids = [str(i) for i in range(self.n)]

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])


@dataclass
class LabelMetrics:
    name: str
    auroc: float
    auroc_defined: bool
    f1: float
    precision: float
    recall: float
    accuracy: float
    threshold: float
    positive_count: int


@dataclass
class MetricsReport:
    per_label: list[LabelMetrics]
    macro: dict[str, float]
    weighted_f1: float
    n_samples: int
    latency_ms: float | None = None

    def to_dict(self) -> dict[str, object]:
        return asdict(self)

    def to_json(self, path: str | Path) -> Path:
        """Full report; undefined AUROCs are written as null."""
        out = Path(path)
        doc = _json_safe(self.to_dict())
        try:
            out.write_text(json.dumps(doc, indent=2))
        except OSError as exc:
            raise VolumeIOError(f"Cannot write report {out}: {exc}") from exc
        return out

    def to_frame(self) -> pd.DataFrame:
        rows = [asdict(m) for m in self.per_label]
        rows.append({"name": "macro", **self.macro, "auroc_defined": True})
        frame = pd.DataFrame(rows)
        frame["weighted_f1"] = self.weighted_f1
        return frame

    def to_csv(self, path: str | Path) -> Path:
        out = Path(path)
        try:
            self.to_frame().to_csv(out, index=False)
        except OSError as exc:
            raise VolumeIOError(f"Cannot write report {out}: {exc}") from exc
        return out


def _json_safe(value: object) -> object:
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def evaluate(preds: PredictionSet, thresholds: list[float], latency_ms: float | None = None) -> MetricsReport:
    """Per-label metrics at the given thresholds, macro means and frequency-weighted F1."""
    if len(thresholds) != len(preds.label_names):
        raise ShapeError(f"{len(thresholds)} thresholds for {len(preds.label_names)} labels")

    per_label: list[LabelMetrics] = []
    for j, name in enumerate(preds.label_names):
        s, y = preds.scores[:, j], preds.labels[:, j]
        auc = auroc(s, y)
        if math.isnan(auc):
            logger.warning("AUROC undefined for label %s (single class in the evaluation set)", name)
        cm = confusion_metrics(s, y, thresholds[j])
        per_label.append(LabelMetrics(
            name=name, auroc=auc, auroc_defined=not math.isnan(auc), f1=cm.f1,
            precision=cm.precision, recall=cm.recall, accuracy=cm.accuracy,
            threshold=float(thresholds[j]), positive_count=int(y.sum()),
        ))

    macro: dict[str, float] = {}
    for key in METRIC_KEYS:
        values = [getattr(m, key) for m in per_label if key != "auroc" or m.auroc_defined]
        macro[key] = float(np.mean(values)) if values else float("nan")

    counts = np.array([m.positive_count for m in per_label], dtype=np.float64)
    f1s = np.array([m.f1 for m in per_label])
    weighted_f1 = float(np.dot(counts / counts.sum(), f1s)) if counts.sum() > 0 else 0.0

    logger.info("Evaluated %d samples: macro AUROC %.4f │ macro F1 %.4f │ W. F1 %.4f",
                preds.n, macro["auroc"], macro["f1"], weighted_f1)
    return MetricsReport(per_label=per_label, macro=macro, weighted_f1=weighted_f1,
                         n_samples=preds.n, latency_ms=latency_ms)
