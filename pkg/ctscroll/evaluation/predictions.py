"""Running a model over a dataset and the predictions CSV."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from ctscroll.errors import VolumeIOError
from ctscroll.evaluation.report import PredictionSet
from ctscroll.model.network import CTScroll
from ctscroll.training.data import ArrayDataset

logger = logging.getLogger(__name__)


def predict(model: CTScroll, dataset: ArrayDataset, label_names: list[str],
            ids: list[str] | None = None) -> tuple[PredictionSet, float]:
    """Score every sample one at a time; returns the prediction set and mean latency in ms."""
    scores = np.empty(dataset.labels.shape, dtype=np.float64)
    elapsed = 0.0
    for i, stack in enumerate(dataset.inputs):
        start = time.perf_counter()
        scores[i] = model.predict_scores(stack)
        elapsed += time.perf_counter() - start
    latency_ms = 1000.0 * elapsed / len(dataset)
    logger.info("Scored %d samples, %.1f ms per sample", len(dataset), latency_ms)
    preds = PredictionSet(scores=scores, labels=dataset.labels, label_names=list(label_names),
                          ids=list(ids) if ids else [])
    return preds, latency_ms


def write_predictions(preds: PredictionSet, path: str | Path) -> Path:
    """CSV columns: id, label_0..label_{L-1}, score_0..score_{L-1}."""
    n_labels = len(preds.label_names)
    frame = pd.DataFrame({"id": preds.ids})
    for j in range(n_labels):
        frame[f"label_{j}"] = preds.labels[:, j]
    for j in range(n_labels):
        frame[f"score_{j}"] = preds.scores[:, j]
    out = Path(path)
    try:
        frame.to_csv(out, index=False, float_format="%.17g")
    except OSError as exc:
        raise VolumeIOError(f"Cannot write predictions {out}: {exc}") from exc
    return out


def read_predictions(path: str | Path, label_names: list[str] | None = None) -> PredictionSet:
    try:
        frame = pd.read_csv(path, dtype={"id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise VolumeIOError(f"Cannot read predictions {path}: {exc}") from exc
    label_cols = sorted((c for c in frame.columns if c.startswith("label_")), key=lambda c: int(c[6:]))
    score_cols = sorted((c for c in frame.columns if c.startswith("score_")), key=lambda c: int(c[6:]))
    if "id" not in frame.columns or not label_cols or len(label_cols) != len(score_cols):
        raise VolumeIOError(f"{path} needs columns id, label_0.., score_0.. in equal numbers")
    names = list(label_names) if label_names else [f"label_{j}" for j in range(len(label_cols))]
    return PredictionSet(
        scores=frame[score_cols].to_numpy(dtype=np.float64),
        labels=frame[label_cols].to_numpy(dtype=np.int64),
        label_names=names,
        ids=frame["id"].tolist(),
    )
