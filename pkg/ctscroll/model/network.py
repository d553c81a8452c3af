"""The CT-Scroll network: triplet embedding → token interactions → sum aggregation → MLP head."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import expit

from ctscroll.errors import ShapeError
from ctscroll.model.backbone import ResNet2D
from ctscroll.model.config import CTScrollConfig
from ctscroll.model.interactions import TokenInteractions, build_interactions
from ctscroll.model.reduction import build_reduction
from ctscroll.nn import functional as F
from ctscroll.nn.layers import Linear
from ctscroll.nn.module import Module
from ctscroll.nn.tensor import Parameter, Tensor, no_grad
from ctscroll.preprocess.volume import TRIPLET_SIZE, TripletStack

logger = logging.getLogger(__name__)

POS_EMBED_STD = 0.02

ModelInput = TripletStack | np.ndarray | Tensor


class ClassificationHead(Module):
    """Ψ: Linear(d→d) → GELU → Linear(d→n_labels)."""

    def __init__(self, d: int, n_labels: int, rng: np.random.Generator, dtype: Any = np.float32) -> None:
        self.hidden = Linear(d, d, rng, dtype=dtype)
        self.out = Linear(d, n_labels, rng, dtype=dtype)

    def forward(self, pooled: Tensor) -> Tensor:
        return self.out(F.gelu(self.hidden(pooled)))


def aggregate_classify(hu: Tensor, head: ClassificationHead) -> Tensor:
    """ŷ = Ψ(Σ_i h_iᵘ); tokens on axis -2."""
    return head(hu.sum(axis=-2))


@dataclass
class ForwardTrace:
    """Intermediates kept by `CTScroll.trace` (batched shapes)."""

    logits: Tensor
    tokens: Tensor
    feature_map: Tensor


class CTScroll(Module):
    def __init__(self, cfg: CTScrollConfig, seed: int = 0, dtype: Any = np.float32) -> None:
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.backbone = ResNet2D(cfg.backbone, rng, dtype)
        self.reduction = build_reduction(cfg, rng, dtype)
        self.pos_embed = (
            Parameter(rng.normal(0.0, POS_EMBED_STD, size=(cfg.n_triplets, cfg.d_model)).astype(dtype))
            if cfg.use_pos_embed
            else None
        )
        self.interactions: TokenInteractions = build_interactions(cfg, rng, dtype)
        self.head = ClassificationHead(cfg.d_model, cfg.n_labels, rng, dtype)
        logger.debug("Built CT-Scroll (%s / %s), %d parameters",
                     cfg.reduction.value, cfg.interactions.value, self.num_parameters())

    @property
    def dtype(self) -> np.dtype:
        return self.head.out.weight.dtype

    # ── Input handling ──────────────────────────────────────────
    def _as_batch(self, x: ModelInput) -> tuple[Tensor, bool]:
        """Return a (B, n, 3, H, W) tensor in the model dtype and whether a batch axis was added."""
        if isinstance(x, TripletStack):
            x = x.triplets
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        single = data.ndim == 4
        if single:
            data = data[None]
        cfg = self.cfg
        expected = (cfg.n_triplets, TRIPLET_SIZE, cfg.slice_hw, cfg.slice_hw)
        if data.ndim != 5 or data.shape[1:] != expected:
            raise ShapeError(f"Expected input (B, {', '.join(map(str, expected))}), got {data.shape}")
        if isinstance(x, Tensor) and x.dtype == self.dtype:
            return (x.reshape(1, *x.shape) if single else x), single
        return Tensor(data.astype(self.dtype, copy=False)), single

    # ── Stages ──────────────────────────────────────────────────
    def _embed(self, batch: Tensor) -> tuple[Tensor, Tensor]:
        b, n = batch.shape[:2]
        fm = self.backbone(batch.reshape(b * n, *batch.shape[2:]))
        fm = fm.reshape(b, n, *fm.shape[1:])
        tokens = self.reduction(fm)
        if tokens.shape[-1] != self.cfg.d_model:
            raise ShapeError(f"Reduction produced {tokens.shape[-1]} channels, d_model is {self.cfg.d_model}")
        if self.pos_embed is not None:
            tokens = tokens + self.pos_embed
        return tokens, fm

    def embed_triplets(self, x: ModelInput) -> Tensor:
        """Token sequence h: (n, d) for one stack, (B, n, d) for a batch."""
        batch, single = self._as_batch(x)
        tokens, _ = self._embed(batch)
        return tokens[0] if single else tokens

    def trace(self, x: ModelInput) -> ForwardTrace:
        batch, _ = self._as_batch(x)
        tokens, fm = self._embed(batch)
        hu = self.interactions(tokens)
        return ForwardTrace(logits=aggregate_classify(hu, self.head), tokens=hu, feature_map=fm)

    def forward(self, x: ModelInput) -> Tensor:
        """Logits: (n_labels,) for one stack, (B, n_labels) for a batch."""
        batch, single = self._as_batch(x)
        tokens, _ = self._embed(batch)
        logits = aggregate_classify(self.interactions(tokens), self.head)
        return logits[0] if single else logits

    def predict_scores(self, x: ModelInput) -> np.ndarray:
        """Sigmoid scores without building a graph."""
        with no_grad():
            logits = self.forward(x).data.astype(np.float64)
        return expit(logits)
