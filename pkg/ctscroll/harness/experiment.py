"""
Seeded experiment runs: train per seed, pick thresholds on val, evaluate on test.

Summaries report mean ± std per metric over seeds (std = 0 for a single seed) and
pairwise paired t-tests between named configurations.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.evaluation.predictions import predict, write_predictions
from ctscroll.evaluation.report import MetricsReport, PredictionSet, evaluate
from ctscroll.evaluation.significance import paired_t_test
from ctscroll.evaluation.thresholds import select_thresholds, write_thresholds
from ctscroll.harness.dataset import DatasetManifest, Split, load_dataset
from ctscroll.model.config import CTScrollConfig
from ctscroll.model.network import CTScroll
from ctscroll.preprocess.pipeline import PreprocessConfig
from ctscroll.training.data import ArrayDataset, ShuffledBatches
from ctscroll.training.loop import TrainConfig, train_loop

logger = logging.getLogger(__name__)

RANDOM_BASELINE = "random_predictions"

# Report attribute → summary column.
SUMMARY_COLUMNS: dict[str, str] = {
    "auroc": "AUROC",
    "accuracy": "Accuracy",
    "f1": "F1 Score",
    "weighted_f1": "W. F1 Score",
    "precision": "Precision",
    "recall": "Recall",
}


@dataclass
class ExperimentData:
    splits: dict[Split, ArrayDataset]
    manifests: dict[Split, DatasetManifest]

    @property
    def label_names(self) -> list[str]:
        return self.manifests[Split.TEST].label_names

    def ids(self, split: Split) -> list[str]:
        return self.manifests[split].ids


def load_experiment_data(dataset_dir: str | Path, preprocess: PreprocessConfig | None = None) -> ExperimentData:
    root = Path(dataset_dir)
    splits: dict[Split, ArrayDataset] = {}
    manifests: dict[Split, DatasetManifest] = {}
    for split in Split:
        path = root / f"{split.value}.json"
        if not path.exists():
            raise VolumeIOError(f"Dataset split missing: {path}")
        splits[split], manifests[split] = load_dataset(path, preprocess)
    return ExperimentData(splits=splits, manifests=manifests)


@dataclass
class RunRecord:
    name: str
    seed: int
    report: MetricsReport
    thresholds: list[float]
    checkpoint: Path | None = None

    def metric(self, key: str) -> float:
        if key == "weighted_f1":
            return self.report.weighted_f1
        return self.report.macro[key]


@dataclass
class ExperimentResult:
    runs: list[RunRecord]
    summary: pd.DataFrame
    significance: pd.DataFrame = field(default_factory=pd.DataFrame)

    def names(self) -> list[str]:
        return list(dict.fromkeys(r.name for r in self.runs))

    def metric_runs(self, name: str, key: str) -> np.ndarray:
        """One value per seed, in seed order."""
        runs = sorted((r for r in self.runs if r.name == name), key=lambda r: r.seed)
        return np.array([r.metric(key) for r in runs], dtype=np.float64)

    def runs_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"model": r.name, "seed": r.seed, **{col: r.metric(key) for key, col in SUMMARY_COLUMNS.items()}}
            for r in self.runs
        ])

    def write(self, out_dir: str | Path) -> Path:
        """Write summary.csv (mean ± std strings), runs.csv and significance.csv; returns summary.csv."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        try:
            format_summary(self.summary).to_csv(out / "summary.csv", index=False)
            self.runs_frame().to_csv(out / "runs.csv", index=False)
            if not self.significance.empty:
                self.significance.to_csv(out / "significance.csv", index=False)
        except OSError as exc:
            raise VolumeIOError(f"Cannot write experiment tables to {out}: {exc}") from exc
        return out / "summary.csv"


# ── Single runs ─────────────────────────────────────────────────
def score_model(
    model: CTScroll,
    data: ExperimentData,
    out_dir: str | Path | None = None,
    report_name: str = "report.json",
) -> tuple[MetricsReport, list[float]]:
    """Select thresholds on val, evaluate on test; optionally write thresholds, predictions and report."""
    names = data.label_names
    val_preds, _ = predict(model, data.splits[Split.VAL], names, data.ids(Split.VAL))
    choices = select_thresholds(val_preds.scores, val_preds.labels, names)
    thresholds = [c.threshold for c in choices]
    test_preds, latency = predict(model, data.splits[Split.TEST], names, data.ids(Split.TEST))
    report = evaluate(test_preds, thresholds, latency_ms=latency)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_thresholds(choices, names, out / "thresholds.json")
        write_predictions(test_preds, out / "predictions.csv")
        report.to_json(out / report_name)
    return report, thresholds


def run_single(
    name: str,
    model_cfg: CTScrollConfig,
    data: ExperimentData,
    seed: int,
    train_cfg: TrainConfig,
    out_dir: str | Path,
) -> RunRecord:
    run_dir = Path(out_dir) / name / f"seed{seed}"
    cfg = train_cfg.model_copy(update={"seed": seed})
    source = ShuffledBatches(data.splits[Split.TRAIN], cfg.batch_size, seed)
    result = train_loop(model_cfg, source, cfg, run_dir)
    report, thresholds = score_model(result.model, data, run_dir)
    logger.info("%s seed %d: macro AUROC %.4f", name, seed, report.macro["auroc"])
    return RunRecord(name=name, seed=seed, report=report, thresholds=thresholds, checkpoint=result.checkpoint)


def random_baseline(data: ExperimentData, seed: int) -> RunRecord:
    """Uniform random scores, thresholds selected on val like any model."""
    rng = np.random.default_rng([seed, 7])
    names = data.label_names
    val, test = data.splits[Split.VAL], data.splits[Split.TEST]
    val_scores = rng.random(val.labels.shape)
    test_scores = rng.random(test.labels.shape)
    choices = select_thresholds(val_scores, val.labels, names)
    thresholds = [c.threshold for c in choices]
    preds = PredictionSet(scores=test_scores, labels=test.labels, label_names=names, ids=data.ids(Split.TEST))
    return RunRecord(name=RANDOM_BASELINE, seed=seed, report=evaluate(preds, thresholds), thresholds=thresholds)


# ── Tables ──────────────────────────────────────────────────────
def summarize(runs: list[RunRecord]) -> pd.DataFrame:
    """Per model: n_runs and `<metric>` / `<metric> std` columns (sample std, 0 for one run)."""
    rows = []
    for name in dict.fromkeys(r.name for r in runs):
        mine = [r for r in runs if r.name == name]
        row: dict[str, object] = {"model": name, "n_runs": len(mine)}
        for key, col in SUMMARY_COLUMNS.items():
            values = np.array([r.metric(key) for r in mine], dtype=np.float64)
            row[col] = float(np.nanmean(values)) if np.isfinite(values).any() else float("nan")
            row[f"{col} std"] = float(np.nanstd(values, ddof=1)) if np.isfinite(values).sum() > 1 else 0.0
        rows.append(row)
    return pd.DataFrame(rows)


def format_summary(summary: pd.DataFrame, digits: int = 3) -> pd.DataFrame:
    """`mean ± std` strings under the plain metric column names."""
    table = summary[["model"]].copy()
    for col in SUMMARY_COLUMNS.values():
        if col in summary.columns:
            table[col] = [
                f"{m:.{digits}f} ± {s:.{digits}f}" for m, s in zip(summary[col], summary[f"{col} std"])
            ]
    return table


def pairwise_significance(runs: list[RunRecord]) -> pd.DataFrame:
    """Paired t-test p-values for every pair of named configurations and every summary metric."""
    names = list(dict.fromkeys(r.name for r in runs))
    by_name = {n: sorted((r for r in runs if r.name == n), key=lambda r: r.seed) for n in names}
    rows = []
    for a, b in itertools.combinations(names, 2):
        seeds_a = [r.seed for r in by_name[a]]
        if seeds_a != [r.seed for r in by_name[b]] or len(seeds_a) < 2:
            logger.warning("Skipping t-test %s vs %s: needs ≥ 2 shared seeds", a, b)
            continue
        for key, col in SUMMARY_COLUMNS.items():
            xa = np.array([r.metric(key) for r in by_name[a]])
            xb = np.array([r.metric(key) for r in by_name[b]])
            if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
                continue
            rows.append({"model_a": a, "model_b": b, "metric": col, "p_value": paired_t_test(xa, xb)})
    return pd.DataFrame(rows, columns=["model_a", "model_b", "metric", "p_value"])


# ── Experiments ─────────────────────────────────────────────────
def run_experiment(
    configs: dict[str, CTScrollConfig],
    data: ExperimentData | str | Path,
    seeds: list[int],
    train_cfg: TrainConfig,
    out_dir: str | Path,
    include_random_baseline: bool = True,
    workers: int = 1,
    preprocess: PreprocessConfig | None = None,
) -> ExperimentResult:
    """
    Train and evaluate every named config for every seed.

    Runs may execute on `workers` threads; each run is self-contained and results
    are collected in (config, seed) order.
    """
    if not seeds:
        raise ShapeError("run_experiment needs at least one seed")
    if not configs:
        raise ShapeError("run_experiment needs at least one named config")
    if not isinstance(data, ExperimentData):
        data = load_experiment_data(data, preprocess)

    jobs = [(name, cfg, seed) for name, cfg in configs.items() for seed in seeds]
    logger.info("Running %d configs × %d seeds", len(configs), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="run") as pool:
            runs = list(pool.map(lambda job: run_single(*job[:2], data, job[2], train_cfg, out_dir), jobs))
    else:
        runs = [run_single(name, cfg, data, seed, train_cfg, out_dir) for name, cfg, seed in jobs]
    if include_random_baseline:
        runs += [random_baseline(data, seed) for seed in seeds]

    result = ExperimentResult(runs=runs, summary=summarize(runs), significance=pairwise_significance(runs))
    result.write(out_dir)
    return result


def window_sweep(
    base: CTScrollConfig,
    qs: list[int],
    data: ExperimentData | str | Path,
    seeds: list[int],
    train_cfg: TrainConfig,
    out_dir: str | Path,
    workers: int = 1,
) -> ExperimentResult:
    """`run_experiment` over one config per window size q, named `q=<q>`."""
    configs = {f"q={q}": base.variant(q=q) for q in qs}
    return run_experiment(configs, data, seeds, train_cfg, out_dir, include_random_baseline=False, workers=workers)
