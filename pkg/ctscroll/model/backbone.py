"""Residual 2D CNN shared by every triplet."""

from __future__ import annotations

import logging
from typing import Any

import numpy as np

from ctscroll.errors import ShapeError
from ctscroll.model.config import BackboneSpec
from ctscroll.nn import functional as F
from ctscroll.nn.layers import Conv2d
from ctscroll.nn.module import Module, zeros
from ctscroll.nn.tensor import Tensor

logger = logging.getLogger(__name__)

IN_CHANNELS = 3  # one triplet = three consecutive slices


def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class BasicBlock(Module):
    """Two 3×3 convs; the residual branch is scaled by a learned scalar starting at 0."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, padding=1, dtype=dtype)
        self.branch_scale = zeros((1,), dtype)
        self.shortcut = (
            Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0, dtype=dtype)
            if stride != 1 or c_in != c_out
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        branch = self.conv2(self.conv1(x).relu()) * self.branch_scale
        skip = x if self.shortcut is None else self.shortcut(x)
        return (skip + branch).relu()


class ResNet2D(Module):
    """Stem conv (+ max-pool) then stages of basic blocks; stage 0 keeps resolution."""

    def __init__(self, spec: BackboneSpec, rng: np.random.Generator, dtype: Any = np.float32) -> None:
        self.spec = spec
        self.stem = Conv2d(
            IN_CHANNELS, spec.stem_channels, spec.stem_kernel, rng,
            stride=spec.stem_stride, padding=spec.stem_kernel // 2, dtype=dtype,
        )
        blocks: list[BasicBlock] = []
        c_in = spec.stem_channels
        for stage, (c_out, n_blocks) in enumerate(zip(spec.channels, spec.blocks)):
            for b in range(n_blocks):
                stride = 2 if stage > 0 and b == 0 else 1
                blocks.append(BasicBlock(c_in, c_out, stride, rng, dtype))
                c_in = c_out
        self.blocks = blocks

    @property
    def out_channels(self) -> int:
        return self.spec.out_channels

    def forward(self, x: Tensor) -> Tensor:
        """(N, 3, H, W) → last feature map (N, C, H', W')."""
        if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
            raise ShapeError(f"Backbone expects (N, {IN_CHANNELS}, H, W), got {x.shape}")
        out = self.stem(x).relu()
        if self.spec.stem_pool:
            out = F.max_pool2d(out, kernel=3, stride=2, padding=1)
        for block in self.blocks:
            out = block(out)
        return out


def feature_map_hw(spec: BackboneSpec, slice_hw: int) -> int:
    """Spatial side of the last feature map for square inputs of side `slice_hw`."""
    size = _out_size(slice_hw, spec.stem_kernel, spec.stem_stride, spec.stem_kernel // 2)
    if spec.stem_pool:
        size = _out_size(size, 3, 2, 1)
    for _ in spec.channels[1:]:
        size = _out_size(size, 3, 2, 1)
    if size < 1:
        raise ShapeError(f"Slices of side {slice_hw} vanish inside the backbone")
    return size


def backbone_param_count(spec: BackboneSpec) -> int:
    def conv(c_in: int, c_out: int, k: int) -> int:
        return c_in * c_out * k * k + c_out

    total = conv(IN_CHANNELS, spec.stem_channels, spec.stem_kernel)
    c_in = spec.stem_channels
    for stage, (c_out, n_blocks) in enumerate(zip(spec.channels, spec.blocks)):
        for b in range(n_blocks):
            stride = 2 if stage > 0 and b == 0 else 1
            total += conv(c_in, c_out, 3) + conv(c_out, c_out, 3) + 1
            if stride != 1 or c_in != c_out:
                total += conv(c_in, c_out, 1)
            c_in = c_out
    return total
