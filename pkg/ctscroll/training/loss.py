"""Multi-label binary cross-entropy on logits."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ctscroll.errors import ShapeError
from ctscroll.nn.tensor import Tensor


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    Mean over all entries of max(z, 0) − z·y + log(1 + exp(−|z|)).

    Gradient w.r.t. z is (σ(z) − y) / (B·L).
    """
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError(f"Labels {y.shape} do not match logits {z.shape}")
    per_entry = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = z.size

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (expit(z) - y) / count,)

    return Tensor.from_op(np.asarray(per_entry.mean(), dtype=z.dtype), (logits,), backward)
