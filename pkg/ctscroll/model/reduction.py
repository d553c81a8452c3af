"""Feature map → token reductions: GAP, flattened linear projection, small 3D CNN."""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np

from ctscroll.errors import ShapeError
from ctscroll.model.backbone import feature_map_hw
from ctscroll.model.config import CTScrollConfig, Reduction
from ctscroll.nn import functional as F
from ctscroll.nn.layers import Conv3d, Linear
from ctscroll.nn.module import Module
from ctscroll.nn.tensor import Tensor

# conv3d stack: k=3, depth stride 1 / pad 1, spatial stride 2 / pad 1, hidden = C // 4
CONV3D_KERNEL = 3
CONV3D_STRIDE = (1, 2, 2)
CONV3D_PADDING = (1, 1, 1)
CONV3D_HIDDEN_DIVISOR = 4


def reduce_gap(fm: Tensor) -> Tensor:
    """(..., C, H', W') → (..., C)."""
    return F.global_avg_pool(fm)


def reduce_linear(fm: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Flatten (C, H', W') row-major and project: (..., C, H', W') → (..., d_model)."""
    if fm.ndim < 3:
        raise ShapeError(f"reduce_linear expects (..., C, H', W'), got {fm.shape}")
    *lead, c, h, w = fm.shape
    if c * h * w != weight.shape[0]:
        raise ShapeError(f"Flattened map has {c * h * w} entries, projection expects {weight.shape[0]}")
    return F.linear(fm.reshape(*lead, c * h * w), weight, bias)


def reduce_conv3d(fms: Tensor, kernels: Sequence[tuple[Tensor, Tensor | None]]) -> Tensor:
    """
    Stack per-triplet maps along depth and run a 3D conv stack, ReLU between convs.

    fms: (B, n, C, H', W') → tokens (B, n, d) after a spatial mean of the last conv.
    """
    if fms.ndim != 5:
        raise ShapeError(f"reduce_conv3d expects (B, n, C, H', W'), got {fms.shape}")
    out = fms.transpose(0, 2, 1, 3, 4)
    for i, (weight, bias) in enumerate(kernels):
        out = F.conv3d(out, weight, bias, CONV3D_STRIDE, CONV3D_PADDING)
        if i < len(kernels) - 1:
            out = out.relu()
    return F.global_avg_pool(out).swapaxes(1, 2)


class GapReduction(Module):
    def forward(self, fms: Tensor) -> Tensor:
        return reduce_gap(fms)


class LinearReduction(Module):
    def __init__(self, in_features: int, d_model: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.proj = Linear(in_features, d_model, rng, dtype=dtype)

    def forward(self, fms: Tensor) -> Tensor:
        return reduce_linear(fms, self.proj.weight, self.proj.bias)


class Conv3dReduction(Module):
    def __init__(self, c_in: int, d_model: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        hidden = max(1, c_in // CONV3D_HIDDEN_DIVISOR)
        self.conv1 = Conv3d(c_in, hidden, CONV3D_KERNEL, rng, CONV3D_STRIDE, CONV3D_PADDING, dtype)
        self.conv2 = Conv3d(hidden, d_model, CONV3D_KERNEL, rng, CONV3D_STRIDE, CONV3D_PADDING, dtype)

    def forward(self, fms: Tensor) -> Tensor:
        return reduce_conv3d(fms, [(self.conv1.weight, self.conv1.bias),
                                   (self.conv2.weight, self.conv2.bias)])


def build_reduction(cfg: CTScrollConfig, rng: np.random.Generator, dtype: Any = np.float32) -> Module:
    c = cfg.backbone.out_channels
    if cfg.reduction is Reduction.GAP:
        return GapReduction()
    if cfg.reduction is Reduction.LINEAR_PROJ:
        hw = feature_map_hw(cfg.backbone, cfg.slice_hw)
        return LinearReduction(c * hw * hw, cfg.d_model, rng, dtype)
    if cfg.reduction is Reduction.CONV3D:
        return Conv3dReduction(c, cfg.d_model, rng, dtype)
    raise ShapeError(f"Unknown reduction {cfg.reduction!r}")


def reduction_param_count(cfg: CTScrollConfig) -> int:
    c = cfg.backbone.out_channels
    if cfg.reduction is Reduction.LINEAR_PROJ:
        hw = feature_map_hw(cfg.backbone, cfg.slice_hw)
        return c * hw * hw * cfg.d_model + cfg.d_model
    if cfg.reduction is Reduction.CONV3D:
        hidden = max(1, c // CONV3D_HIDDEN_DIVISOR)
        k3 = CONV3D_KERNEL ** 3
        return (c * hidden * k3 + hidden) + (hidden * cfg.d_model * k3 + cfg.d_model)
    return 0
