"""End-to-end preprocessing: resample → clip → rescale → crop/pad → normalize → group."""

from __future__ import annotations

import logging

from pydantic import BaseModel, Field, model_validator

from ctscroll.preprocess.volume import (
    CANONICAL_SHAPE,
    HU_WINDOW,
    TARGET_SPACING,
    TRIPLET_SIZE,
    CanonicalVolume,
    RawVolume,
    TripletStack,
    clip_hu,
    crop_or_pad,
    group_triplets,
    normalize,
    rescale_unit,
    resample,
)

logger = logging.getLogger(__name__)


class PreprocessConfig(BaseModel):
    """Parameters of the canonical-grid pipeline."""

    hu_window: tuple[float, float] = HU_WINDOW
    target_spacing: tuple[float, float, float] = TARGET_SPACING
    target_shape: tuple[int, int, int] = CANONICAL_SHAPE
    pad_value: float = Field(default=0.0, description="Fill after rescale; 0.0 is air")

    @model_validator(mode="after")
    def _check(self) -> PreprocessConfig:
        lo, hi = self.hu_window
        if lo >= hi:
            raise ValueError(f"hu_window lower bound {lo} must be below upper bound {hi}")
        if any(s <= 0 for s in self.target_spacing):
            raise ValueError("target_spacing must be positive")
        if any(s <= 0 for s in self.target_shape):
            raise ValueError("target_shape must be positive")
        if self.target_shape[0] % TRIPLET_SIZE:
            raise ValueError(f"target slice count must be divisible by {TRIPLET_SIZE}")
        return self

    @classmethod
    def toy(cls) -> PreprocessConfig:
        """Pipeline for the 24×64×64 phantom grid."""
        return cls(target_shape=(24, 64, 64))


def to_canonical(volume: RawVolume, cfg: PreprocessConfig | None = None) -> CanonicalVolume:
    """Run every stage up to and including normalization."""
    cfg = cfg or PreprocessConfig()
    lo, hi = cfg.hu_window
    resampled = resample(volume, cfg.target_spacing)
    unit = rescale_unit(clip_hu(resampled, lo, hi), lo, hi)
    fitted = crop_or_pad(unit, cfg.target_shape, fill=cfg.pad_value)
    canonical = normalize(fitted)
    logger.debug("Canonicalised %s → %s", volume.shape, canonical.shape)
    return canonical


def preprocess_volume(volume: RawVolume, cfg: PreprocessConfig | None = None) -> TripletStack:
    """Raw HU volume → triplet stack ready for the model."""
    return group_triplets(to_canonical(volume, cfg))
