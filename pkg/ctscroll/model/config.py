"""Architecture and ablation description of a CT-Scroll network."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, Field, model_validator

from ctscroll.nn.masks import MaskKind

CT_RATE_LABELS: tuple[str, ...] = (
    "medical_material",
    "arterial_wall_calcification",
    "cardiomegaly",
    "pericardial_effusion",
    "coronary_artery_wall_calcification",
    "hiatal_hernia",
    "lymphadenopathy",
    "emphysema",
    "atelectasis",
    "lung_nodule",
    "lung_opacity",
    "pulmonary_fibrotic_sequela",
    "pleural_effusion",
    "mosaic_attenuation_pattern",
    "peribronchial_thickening",
    "consolidation",
    "bronchiectasis",
    "interlobular_septal_thickening",
)

PHANTOM_LABELS: tuple[str, ...] = (
    "local_blob",
    "long_range_pair",
    "band_gradient",
    "negative_control",
)


class Reduction(str, Enum):
    """How a backbone feature map becomes one token."""

    GAP = "gap"
    LINEAR_PROJ = "linear_proj"
    CONV3D = "conv3d"


class Interactions(str, Enum):
    """Token-interaction module placed between embedding and aggregation."""

    NONE = "none"
    CAUSAL = "causal"
    GLOBAL_ONLY = "global_only"
    GLOBAL_PLUS_LOCAL = "global_plus_local"
    SCROLLING_BLOCK = "scrolling_block"
    LOCAL_ONLY = "local_only"


# Encoder stacks per variant; every attention variant except local_only uses three layers.
ENCODER_STACKS: dict[Interactions, tuple[MaskKind, ...]] = {
    Interactions.NONE: (),
    Interactions.CAUSAL: (MaskKind.CAUSAL,) * 3,
    Interactions.GLOBAL_ONLY: (MaskKind.GLOBAL,) * 3,
    Interactions.GLOBAL_PLUS_LOCAL: (MaskKind.GLOBAL, MaskKind.SWA_SYMMETRIC, MaskKind.SWA_SYMMETRIC),
    Interactions.SCROLLING_BLOCK: (MaskKind.GLOBAL, MaskKind.SWA_CAU_CRA, MaskKind.SWA_CRA_CAU),
    Interactions.LOCAL_ONLY: (MaskKind.SWA_CAU_CRA, MaskKind.SWA_CRA_CAU),
}


class BackboneSpec(BaseModel):
    """Residual 2D CNN: stem conv (+ optional max-pool), then stages of basic blocks."""

    channels: tuple[int, ...] = (64, 128, 256, 512)
    blocks: tuple[int, ...] = (2, 2, 2, 2)
    stem_channels: int = Field(default=64, ge=1)
    stem_kernel: int = Field(default=7, ge=1)
    stem_stride: int = Field(default=2, ge=1)
    stem_pool: bool = True

    @model_validator(mode="after")
    def _check(self) -> BackboneSpec:
        if len(self.channels) != len(self.blocks):
            raise ValueError("channels and blocks must list the same number of stages")
        if any(c < 1 for c in self.channels) or any(b < 1 for b in self.blocks):
            raise ValueError("stage channels and block counts must be positive")
        return self

    @property
    def out_channels(self) -> int:
        return self.channels[-1] if self.channels else self.stem_channels


class CTScrollConfig(BaseModel):
    """Full architecture / ablation description; JSON field names mirror these attributes."""

    n_triplets: int = Field(default=80, ge=1)
    slice_hw: int = Field(default=480, ge=1)
    d_model: int = Field(default=512, ge=1)
    backbone: BackboneSpec = Field(default_factory=BackboneSpec)
    reduction: Reduction = Reduction.GAP
    interactions: Interactions = Interactions.SCROLLING_BLOCK
    q: int = Field(default=16, ge=1)
    heads: int = Field(default=8, ge=1)
    d_ff: int = Field(default=2048, ge=1)
    prenorm: bool = False
    use_pos_embed: bool = True
    n_labels: int = Field(default=18, ge=1)
    label_names: tuple[str, ...] | None = None
    ln_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def _check(self) -> CTScrollConfig:
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.reduction is Reduction.GAP and self.backbone.out_channels != self.d_model:
            raise ValueError(
                f"GAP reduction needs backbone output channels ({self.backbone.out_channels}) "
                f"== d_model ({self.d_model})"
            )
        if self.label_names is not None and len(self.label_names) != self.n_labels:
            raise ValueError("label_names must have n_labels entries")
        return self

    @property
    def names(self) -> tuple[str, ...]:
        if self.label_names is not None:
            return self.label_names
        if self.n_labels == len(CT_RATE_LABELS):
            return CT_RATE_LABELS
        if self.n_labels == len(PHANTOM_LABELS):
            return PHANTOM_LABELS
        return tuple(f"label_{i}" for i in range(self.n_labels))

    @property
    def encoder_kinds(self) -> tuple[MaskKind, ...]:
        return ENCODER_STACKS[self.interactions]

    def variant(self, **changes: object) -> CTScrollConfig:
        """Copy with some fields replaced, re-validated."""
        return CTScrollConfig.model_validate({**self.model_dump(), **changes})

    @classmethod
    def full_scale(cls, **changes: object) -> CTScrollConfig:
        """80 triplets of 480×480 slices, ResNet-18 backbone, d = 512, 18 labels."""
        return cls(**changes)  # type: ignore[arg-type]

    @classmethod
    def toy(cls, **changes: object) -> CTScrollConfig:
        """8 triplets of 64×64 slices matching the 24×64×64 phantom grid."""
        base: dict[str, object] = {
            "n_triplets": 8,
            "slice_hw": 64,
            "d_model": 64,
            "backbone": BackboneSpec(
                channels=(8, 16, 32, 64), blocks=(1, 1, 1, 1), stem_channels=8,
                stem_kernel=7, stem_stride=2, stem_pool=True,
            ),
            "heads": 4,
            "d_ff": 128,
            "q": 3,
            "n_labels": 4,
        }
        base.update(changes)
        return cls.model_validate(base)
