"""Token-interaction stacks: none, causal, global, global + local, Scrolling Block, local only."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

import numpy as np

from ctscroll.errors import ConfigError
from ctscroll.model.config import ENCODER_STACKS, CTScrollConfig, Interactions
from ctscroll.nn.layers import EncoderLayer, encoder_forward, encoder_param_count
from ctscroll.nn.masks import MaskKind
from ctscroll.nn.module import Module
from ctscroll.nn.tensor import Tensor

logger = logging.getLogger(__name__)

SCROLLING_ORDER = (MaskKind.GLOBAL, MaskKind.SWA_CAU_CRA, MaskKind.SWA_CRA_CAU)


def scrolling_block(h: Tensor, encoders: Sequence[EncoderLayer]) -> Tensor:
    """hᵘ = f_cra→cau(f_cau→cra(f_global(h))), applied in exactly that order."""
    kinds = tuple(layer.mask_kind for layer in encoders)
    if kinds != SCROLLING_ORDER:
        raise ConfigError(f"A Scrolling Block needs encoders {[k.value for k in SCROLLING_ORDER]}, got {kinds}")
    for layer in encoders:
        h = encoder_forward(h, layer)
    return h


class TokenInteractions(Module):
    """Sequence of encoder layers over the token axis; identity when empty."""

    def __init__(self, variant: Interactions, layers: list[EncoderLayer]) -> None:
        self.variant = variant
        self.layers = layers

    def forward(self, h: Tensor) -> Tensor:
        if self.variant is Interactions.SCROLLING_BLOCK:
            return scrolling_block(h, self.layers)
        for layer in self.layers:
            h = encoder_forward(h, layer)
        return h


def build_interactions(cfg: CTScrollConfig, rng: np.random.Generator,
                       dtype: Any = np.float32) -> TokenInteractions:
    try:
        variant = Interactions(cfg.interactions)
    except ValueError as exc:
        raise ConfigError(f"Unknown interactions variant {cfg.interactions!r}") from exc
    layers = [
        EncoderLayer(cfg.d_model, cfg.heads, cfg.d_ff, kind, rng, q=cfg.q,
                     prenorm=cfg.prenorm, eps=cfg.ln_eps, dtype=dtype)
        for kind in ENCODER_STACKS[variant]
    ]
    logger.debug("interactions=%s → %s", variant.value, [layer.mask_kind.value for layer in layers])
    return TokenInteractions(variant, layers)


def interactions_param_count(cfg: CTScrollConfig) -> int:
    return len(ENCODER_STACKS[cfg.interactions]) * encoder_param_count(cfg.d_model, cfg.d_ff)
