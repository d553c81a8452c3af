"""Analytic trainable-parameter counts with a per-component breakdown."""

from __future__ import annotations

from dataclasses import dataclass, field

from ctscroll.model.backbone import backbone_param_count
from ctscroll.model.config import CTScrollConfig, Interactions, Reduction
from ctscroll.model.interactions import interactions_param_count
from ctscroll.model.reduction import reduction_param_count

# Reference totals in millions for the standard ablation variants; deltas are reported against these.
REFERENCE_MILLIONS: dict[tuple[Reduction, Interactions], float] = {
    (Reduction.CONV3D, Interactions.NONE): 15.0,
    (Reduction.LINEAR_PROJ, Interactions.NONE): 70.0,
    (Reduction.GAP, Interactions.NONE): 12.0,
    (Reduction.GAP, Interactions.SCROLLING_BLOCK): 16.0,
}


@dataclass
class ParamBreakdown:
    """Trainable scalars per component."""

    components: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def reference_delta(self, cfg: CTScrollConfig) -> float | None:
        """Difference in millions from the reference total for this variant, if one exists."""
        ref = REFERENCE_MILLIONS.get((cfg.reduction, cfg.interactions))
        return None if ref is None else self.total / 1e6 - ref


def param_count(cfg: CTScrollConfig) -> ParamBreakdown:
    d, n_labels = cfg.d_model, cfg.n_labels
    return ParamBreakdown(
        components={
            "backbone": backbone_param_count(cfg.backbone),
            "reduction": reduction_param_count(cfg),
            "pos_embed": cfg.n_triplets * d if cfg.use_pos_embed else 0,
            "interactions": interactions_param_count(cfg),
            "head": (d * d + d) + (d * n_labels + n_labels),
        }
    )
