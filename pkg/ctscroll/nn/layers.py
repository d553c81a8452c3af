"""Parameterised layers: dense, normalization, GeGLU, masked attention, encoders, convs."""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np

from ctscroll.errors import MaskError, ShapeError
from ctscroll.nn import functional as F
from ctscroll.nn.masks import AttentionMask, MaskKind, make_mask
from ctscroll.nn.module import Module, fan_in_uniform, he_uniform, ones, zeros
from ctscroll.nn.tensor import Tensor


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype: Any = np.float32) -> None:
        self.weight = fan_in_uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = fan_in_uniform(rng, (d_out,), d_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype: Any = np.float32) -> None:
        self.gamma = ones((d,), dtype)
        self.beta = zeros((d,), dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class GeGLU(Module):
    """Gated feed-forward: (GELU(x W_g) ⊙ x W_v) W_o."""

    def __init__(self, d: int, d_ff: int, rng: np.random.Generator, dtype: Any = np.float32) -> None:
        self.w_gate = fan_in_uniform(rng, (d, d_ff), d, dtype)
        self.b_gate = zeros((d_ff,), dtype)
        self.w_value = fan_in_uniform(rng, (d, d_ff), d, dtype)
        self.b_value = zeros((d_ff,), dtype)
        self.w_out = fan_in_uniform(rng, (d_ff, d), d_ff, dtype)
        self.b_out = zeros((d,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.geglu_ffn(x, self.w_gate, self.w_value, self.w_out,
                           self.b_gate, self.b_value, self.b_out)


class MultiHeadAttention(Module):
    """Per-head Q/K/V projections packed into d×d matrices, plus the output projection."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype: Any = np.float32) -> None:
        if d % heads:
            raise ShapeError(f"Model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(d, d, rng, dtype=dtype)
        self.key = Linear(d, d, rng, dtype=dtype)
        self.value = Linear(d, d, rng, dtype=dtype)
        self.out = Linear(d, d, rng, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        return x.reshape(*lead, n, self.heads, d // self.heads).swapaxes(-2, -3)

    def forward(self, x: Tensor, mask: AttentionMask) -> Tensor:
        return masked_mha(x, self, mask)[0]


def masked_mha(x: Tensor, attn: MultiHeadAttention, mask: AttentionMask) -> tuple[Tensor, Tensor]:
    """Masked multi-head self-attention over axis -2; returns (output, weights[..., H, n, n])."""
    if mask.n != x.shape[-2]:
        raise ShapeError(f"Mask is {mask.n}×{mask.n} but the sequence has {x.shape[-2]} tokens")
    q, k, v = (attn._split(proj(x)) for proj in (attn.query, attn.key, attn.value))
    context, weights = F.scaled_dot_product_attention(q, k, v, mask)
    *lead, n, d = x.shape
    merged = context.swapaxes(-2, -3).reshape(*lead, n, d)
    return attn.out(merged), weights


class EncoderLayer(Module):
    """Transformer encoder with a fixed attention-mask family."""

    def __init__(
        self,
        d: int,
        heads: int,
        d_ff: int,
        mask_kind: MaskKind | str,
        rng: np.random.Generator,
        q: int = 1,
        prenorm: bool = False,
        eps: float = 1e-5,
        dtype: Any = np.float32,
    ) -> None:
        if q < 1:
            raise MaskError(f"Window size must be ≥ 1, got {q}")
        self.mask_kind = MaskKind(mask_kind)
        self.q = q
        self.prenorm = prenorm
        self.attention = MultiHeadAttention(d, heads, rng, dtype)
        self.norm1 = LayerNorm(d, eps, dtype)
        self.ffn = GeGLU(d, d_ff, rng, dtype)
        self.norm2 = LayerNorm(d, eps, dtype)

    def mask(self, n: int) -> AttentionMask:
        return make_mask(self.mask_kind, n, self.q)

    def forward(self, x: Tensor) -> Tensor:
        return encoder_forward(x, self)


def encoder_forward(x: Tensor, layer: EncoderLayer) -> Tensor:
    """
    Post-norm: u = LN1(x + MHA(x)), y = LN2(u + FFN(u)).
    Pre-norm (layer.prenorm): u = x + MHA(LN1(x)), y = u + FFN(LN2(u)).
    """
    mask = layer.mask(x.shape[-2])
    if layer.prenorm:
        u = x + layer.attention(layer.norm1(x), mask)
        return u + layer.ffn(layer.norm2(u))
    u = layer.norm1(x + layer.attention(x, mask))
    return layer.norm2(u + layer.ffn(u))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dtype: Any = np.float32) -> None:
        fan_in = c_in * kernel * kernel
        self.weight = he_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, dtype)
        self.bias = zeros((c_out,), dtype)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: Sequence[int] = (1, 1, 1), padding: Sequence[int] = (0, 0, 0),
                 dtype: Any = np.float32) -> None:
        fan_in = c_in * kernel ** 3
        self.weight = he_uniform(rng, (c_out, c_in, kernel, kernel, kernel), fan_in, dtype)
        self.bias = zeros((c_out,), dtype)
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)


def encoder_param_count(d: int, d_ff: int) -> int:
    """Trainable scalars of one EncoderLayer."""
    attention = 4 * (d * d + d)
    norms = 2 * 2 * d
    ffn = 2 * (d * d_ff + d_ff) + d_ff * d + d
    return attention + norms + ffn
