"""One JSON run-config file with a section per CLI subcommand."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError, model_validator

from ctscroll.errors import ConfigError
from ctscroll.model.config import CTScrollConfig, Interactions
from ctscroll.preprocess.pipeline import PreprocessConfig
from ctscroll.training.loop import TrainConfig

logger = logging.getLogger(__name__)


class SynthSection(BaseModel):
    n_per_split: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)
    grid: tuple[int, int, int] = (24, 64, 64)
    long_range_distance: int | None = Field(default=None, ge=1)


class EvalSection(BaseModel):
    gradcam_labels: list[int] = Field(default_factory=lambda: [0, 1])
    render_size: int | None = Field(default=None, ge=1)


class ExperimentSection(BaseModel):
    """Named variants are field overrides applied to the `model` section."""

    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    variants: dict[str, dict[str, object]] = Field(default_factory=lambda: {
        Interactions.SCROLLING_BLOCK.value: {"interactions": Interactions.SCROLLING_BLOCK.value},
        Interactions.LOCAL_ONLY.value: {"interactions": Interactions.LOCAL_ONLY.value},
    })
    window_sizes: list[int] = Field(default_factory=lambda: [1, 3, 7])
    random_baseline: bool = True
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self) -> ExperimentSection:
        if not self.seeds:
            raise ValueError("experiment.seeds needs at least one seed")
        if any(q < 1 for q in self.window_sizes):
            raise ValueError("experiment.window_sizes must be ≥ 1")
        return self


class RunConfig(BaseModel):
    model: CTScrollConfig = Field(default_factory=CTScrollConfig.toy)
    synth: SynthSection = Field(default_factory=SynthSection)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig.toy)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalSection = Field(default_factory=EvalSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        z, y, x = self.preprocess.target_shape
        if y != x or y != self.model.slice_hw or z // 3 != self.model.n_triplets:
            raise ValueError(
                f"preprocess.target_shape {self.preprocess.target_shape} does not give "
                f"{self.model.n_triplets} triplets of {self.model.slice_hw}² slices"
            )
        return self

    def variant_configs(self) -> dict[str, CTScrollConfig]:
        """Every experiment variant resolved against the `model` section."""
        try:
            return {name: self.model.variant(**changes) for name, changes in self.experiment.variants.items()}
        except ValidationError as exc:
            raise ConfigError(f"Invalid experiment variant: {exc}") from exc


def load_run_config(path: str | Path | None) -> RunConfig:
    """Read and validate a run config; a missing path gives the toy defaults."""
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"Run config not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot parse run config {path}: {exc}") from exc
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"Invalid run config {path}:\n{exc}") from exc
    logger.debug("Loaded run config %s", path)
    return cfg
