"""CT-Scroll network, ablation variants, parameter counts and checkpoints."""

from ctscroll.model.config import BackboneSpec, CTScrollConfig, Interactions, Reduction
from ctscroll.model.network import CTScroll

__all__ = ["BackboneSpec", "CTScroll", "CTScrollConfig", "Interactions", "Reduction"]
