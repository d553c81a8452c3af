"""Differentiable building blocks with hand-written backward passes."""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ctscroll.errors import ShapeError
from ctscroll.nn.masks import AttentionMask
from ctscroll.nn.tensor import Tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return Tensor.from_op(data, tensors, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W + b over the last axis; `x` may be a single vector."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} ≠ weight rows {weight.shape[0]}")
    if x.ndim == 1:
        y = (x.reshape(1, -1) @ weight).reshape(weight.shape[1])
    else:
        y = x @ weight
    return y if bias is None else y + bias


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: 0.5 x (1 + erf(x / √2))."""
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
    return Tensor.from_op(a * cdf, (x,), lambda g: (g * (cdf + a * pdf),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis with population variance, then scale and shift."""
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    lead = tuple(range(a.ndim - 1))

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def masked_softmax(scores: Tensor, mask: AttentionMask) -> Tensor:
    """Row softmax of `scores + bias`, bias 0 where allowed and -inf where blocked."""
    s = scores.data + mask.bias(scores.dtype)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    a = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (a * (g - (g * a).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(a, (scores,), backward)


def scaled_dot_product_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask
) -> tuple[Tensor, Tensor]:
    """softmax(Q Kᵀ / √d_head + M) V over the last two axes; returns (output, weights)."""
    if mask.n != q.shape[-2] or mask.n != k.shape[-2]:
        raise ShapeError(f"Mask covers {mask.n} tokens, attention sees {q.shape[-2]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    weights = masked_softmax((q @ k.swapaxes(-1, -2)) * scale, mask)
    return weights @ v, weights


def geglu_ffn(
    x: Tensor,
    w_gate: Tensor,
    w_value: Tensor,
    w_out: Tensor,
    b_gate: Tensor | None = None,
    b_value: Tensor | None = None,
    b_out: Tensor | None = None,
) -> Tensor:
    """(GELU(x W_g) ⊙ (x W_v)) W_o."""
    hidden = gelu(linear(x, w_gate, b_gate)) * linear(x, w_value, b_value)
    return linear(hidden, w_out, b_out)


def _conv_windows(
    data: np.ndarray, kernel: tuple[int, ...], stride: tuple[int, ...], pad: tuple[int, ...],
    fill: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Padded input and its strided patch view of shape (N, C, *out, *kernel)."""
    k = len(kernel)
    padded = np.pad(
        data, [(0, 0), (0, 0)] + [(p, p) for p in pad], mode="constant", constant_values=fill
    )
    if any(ps < ks for ps, ks in zip(padded.shape[2:], kernel)):
        raise ShapeError(f"Kernel {kernel} does not fit padded input {padded.shape[2:]}")
    windows = sliding_window_view(padded, kernel, axis=tuple(range(2, 2 + k)))
    strided = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return padded, windows[strided]


def _tuple(value: int | Sequence[int], k: int) -> tuple[int, ...]:
    return tuple(value) if isinstance(value, Sequence) else (value,) * k


def conv_nd(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int | Sequence[int] = 1,
    padding: int | Sequence[int] = 0,
) -> Tensor:
    """
    Cross-correlation over the trailing k spatial axes.

    x: (N, C, *S), weight: (O, C, *K). Output spatial size per axis is
    floor((S + 2p - K) / s) + 1.
    """
    k = weight.ndim - 2
    if x.ndim != k + 2:
        raise ShapeError(f"conv{k}d expects a {k + 2}-D input, got shape {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv: input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    kernel = weight.shape[2:]
    stride_t, pad_t = _tuple(stride, k), _tuple(padding, k)
    padded, windows = _conv_windows(x.data, kernel, stride_t, pad_t)
    out_spatial = windows.shape[2 : 2 + k]

    spatial_axes = list(range(2, 2 + k))
    kernel_axes = list(range(2 + k, 2 + 2 * k))
    out = np.tensordot(windows, weight.data, axes=([1] + kernel_axes, [1] + list(range(2, 2 + k))))
    out = np.moveaxis(out, -1, 1)  # (N, O, *out)
    x_shape = x.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        reduce_axes = [0] + spatial_axes
        g_weight = np.tensordot(g, windows, axes=(reduce_axes, reduce_axes))
        g_padded = np.zeros_like(padded)
        for offset in itertools.product(*(range(ks) for ks in kernel)):
            contrib = np.tensordot(g, weight.data[(slice(None), slice(None)) + offset], axes=([1], [0]))
            target = (slice(None), slice(None)) + tuple(
                slice(o, o + s * n, s) for o, s, n in zip(offset, stride_t, out_spatial)
            )
            g_padded[target] += np.moveaxis(contrib, -1, 1)
        crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad_t, x_shape[2:]))
        g_bias = g.sum(axis=tuple(reduce_axes)) if bias is not None else None
        return g_padded[crop], g_weight, g_bias

    parents: tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * k)
    return Tensor.from_op(out, parents, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int | Sequence[int] = 1, padding: int | Sequence[int] = 0) -> Tensor:
    return conv_nd(x, weight, bias, stride, padding)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int | Sequence[int] = 1, padding: int | Sequence[int] = 0) -> Tensor:
    return conv_nd(x, weight, bias, stride, padding)


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Spatial max over (kernel × kernel) windows; ties route the gradient to the first max."""
    kernel_t, stride_t, pad_t = (kernel, kernel), (stride, stride), (padding, padding)
    padded, windows = _conv_windows(x.data, kernel_t, stride_t, pad_t, fill=-np.inf)
    out_h, out_w = windows.shape[2:4]
    flat = windows.reshape(windows.shape[:4] + (kernel * kernel,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    x_shape = x.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        g_padded = np.zeros_like(padded)
        for pos in range(kernel * kernel):
            i, j = divmod(pos, kernel)
            g_padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                g * (arg == pos)
            )
        return (g_padded[:, :, padding : padding + x_shape[2], padding : padding + x_shape[3]],)

    return Tensor.from_op(out, (x,), backward)


def global_avg_pool(fm: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: (..., C, H, W) → (..., C)."""
    if fm.shape[-1] < 1 or fm.shape[-2] < 1:
        raise ShapeError(f"global_avg_pool needs a non-empty map, got {fm.shape}")
    return fm.mean(axis=(-2, -1))
