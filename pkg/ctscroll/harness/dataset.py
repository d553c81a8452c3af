"""Phantom datasets on disk: generation, manifests, validation and loading."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator
from statsmodels.stats.proportion import proportion_confint

from ctscroll.errors import VolumeIOError
from ctscroll.harness.phantom import N_LABELS, PhantomSpec, random_phantom_spec, synth_volume
from ctscroll.model.config import PHANTOM_LABELS
from ctscroll.preprocess.io import read_rvol, write_rvol
from ctscroll.preprocess.pipeline import PreprocessConfig, preprocess_volume
from ctscroll.training.data import ArrayDataset

logger = logging.getLogger(__name__)

PAIR_GROUP = 4


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestEntry(BaseModel):
    id: str
    volume_path: str
    labels: list[int]


class DatasetManifest(BaseModel):
    split: Split
    label_names: list[str]
    grid: tuple[int, int, int]
    seed: int
    entries: list[ManifestEntry]

    @model_validator(mode="after")
    def _check(self) -> DatasetManifest:
        width = len(self.label_names)
        bad = [e.id for e in self.entries if len(e.labels) != width]
        if bad:
            raise ValueError(f"Entries {bad[:5]} do not carry {width} labels")
        return self

    def label_matrix(self) -> np.ndarray:
        return np.array([e.labels for e in self.entries], dtype=np.int64).reshape(-1, len(self.label_names))

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]


def _sample_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def balanced_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly n // 2 ones, shuffled."""
    bits = np.zeros(n, dtype=bool)
    bits[: n // 2] = True
    return rng.permutation(bits)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    out = Path(path)
    try:
        out.write_text(manifest.model_dump_json(indent=2))
    except OSError as exc:
        raise VolumeIOError(f"Cannot write manifest {out}: {exc}") from exc
    return out


def read_manifest(path: str | Path) -> DatasetManifest:
    try:
        return DatasetManifest.model_validate(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise VolumeIOError(f"Cannot read manifest {path}: {exc}") from exc


def phantom_specs(
    split: Split,
    n: int,
    seed: int,
    grid: tuple[int, int, int] = (24, 64, 64),
    long_range_distance: int | None = None,
) -> list[PhantomSpec]:
    """
    Specs of one split; labels 0 and 2 are balanced exactly, label 1 by construction.

    Phantoms come in groups of four sharing one marker geometry (pair +, pair −,
    decoy +, decoy −), so any window holding a single marker sees each polarity
    equally often whether or not label 1 is set.
    """
    if n < 1:
        raise VolumeIOError(f"A split needs at least one sample, got n={n}")
    split_idx = list(Split).index(split)
    rng = np.random.default_rng([seed, split_idx])
    blob_bits = balanced_bits(n, rng)
    band_bits = balanced_bits(n, rng)
    specs = []
    for i in range(n):
        group, member = divmod(i, PAIR_GROUP)
        specs.append(random_phantom_spec(
            targets=(bool(blob_bits[i]), member < 2, bool(band_bits[i])),
            seed=_sample_seed(seed, split_idx, i),
            grid=grid,
            long_range_distance=long_range_distance,
            polarity=1.0 if member % 2 == 0 else -1.0,
            pair_seed=_sample_seed(seed, split_idx, group, PAIR_GROUP),
        ))
    return specs


def make_split(
    out_dir: str | Path,
    split: Split,
    n: int,
    seed: int,
    grid: tuple[int, int, int] = (24, 64, 64),
    long_range_distance: int | None = None,
) -> Path:
    """Render `n` phantoms as RVOL files under `<out_dir>/<split>/` and write `<split>.json`."""
    root = Path(out_dir)
    vol_dir = root / split.value
    vol_dir.mkdir(parents=True, exist_ok=True)

    entries: list[ManifestEntry] = []
    for i, spec in enumerate(phantom_specs(split, n, seed, grid, long_range_distance)):
        volume, labels, _ = synth_volume(spec)
        sample_id = f"{split.value}_{i:05d}"
        write_rvol(volume, vol_dir / f"{sample_id}.json")
        entries.append(ManifestEntry(
            id=sample_id, volume_path=f"{split.value}/{sample_id}.json", labels=labels.tolist(),
        ))

    manifest = DatasetManifest(split=split, label_names=list(PHANTOM_LABELS[:N_LABELS]),
                               grid=grid, seed=seed, entries=entries)
    path = write_manifest(manifest, root / f"{split.value}.json")
    logger.info("Wrote %d %s phantoms → %s", n, split.value, path)
    return path


def make_dataset(
    out_dir: str | Path,
    n_per_split: int | dict[Split, int],
    seed: int,
    grid: tuple[int, int, int] = (24, 64, 64),
    long_range_distance: int | None = None,
) -> dict[Split, Path]:
    """Generate train/val/test splits; byte-identical for a fixed seed."""
    counts = n_per_split if isinstance(n_per_split, dict) else {s: n_per_split for s in Split}
    return {
        split: make_split(out_dir, split, counts[split], seed, grid, long_range_distance)
        for split in Split
    }


# ── Validation ──────────────────────────────────────────────────
@dataclass
class ValidationResult:
    """Result of manifest validation."""

    is_valid: bool
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def validate_manifest(manifest: DatasetManifest, root: str | Path, balance_alpha: float = 0.05) -> ValidationResult:
    """
    Check that a manifest is usable for training or evaluation.

    Checks:
    - Every volume file exists
    - Labels are binary
    - Label balance: 0.5 inside the Wilson interval of each label's positive rate
    - Single-class labels (AUROC undefined)
    """
    errors: list[str] = []
    warnings: list[str] = []
    base = Path(root)

    if not manifest.entries:
        errors.append(f"Split '{manifest.split.value}' has no entries.")
    missing = [e.id for e in manifest.entries if not (base / e.volume_path).exists()]
    if missing:
        errors.append(f"{len(missing)} volume file(s) missing, e.g. {missing[:3]}.")

    labels = manifest.label_matrix()
    if labels.size and not np.isin(labels, (0, 1)).all():
        errors.append("Label vectors must be binary.")
    elif labels.size:
        n = labels.shape[0]
        for j, name in enumerate(manifest.label_names):
            positives = int(labels[:, j].sum())
            if positives in (0, n):
                warnings.append(f"Label '{name}' has a single class ({positives}/{n} positive); AUROC is undefined.")
                continue
            lo, hi = proportion_confint(positives, n, alpha=balance_alpha, method="wilson")
            if not lo <= 0.5 <= hi:
                warnings.append(f"Label '{name}' is unbalanced: {positives}/{n} positive.")

    is_valid = not errors
    if not is_valid:
        logger.error("Manifest validation failed with %d errors", len(errors))
    elif warnings:
        logger.warning("Manifest validation passed with %d warnings", len(warnings))
    else:
        logger.info("Manifest validation passed.")
    return ValidationResult(is_valid=is_valid, errors=errors, warnings=warnings)


# ── Loading ─────────────────────────────────────────────────────
def load_dataset(
    manifest_path: str | Path,
    preprocess: PreprocessConfig | None = None,
) -> tuple[ArrayDataset, DatasetManifest]:
    """Read and preprocess every volume of a manifest into memory (float32 triplet stacks)."""
    path = Path(manifest_path)
    manifest = read_manifest(path)
    cfg = preprocess or PreprocessConfig(target_shape=manifest.grid)
    stacks = [
        preprocess_volume(read_rvol(path.parent / e.volume_path), cfg).triplets.astype(np.float32)
        for e in manifest.entries
    ]
    logger.info("Loaded %d %s volumes from %s", len(stacks), manifest.split.value, path)
    return ArrayDataset(inputs=np.stack(stacks), labels=manifest.label_matrix()), manifest
