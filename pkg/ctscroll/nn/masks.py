"""
Attention masks over the longitudinal token axis.

Row i lists the tokens that token i may attend to (1 = allowed). Windows count the
attended tokens including the token itself, so q = 1 means self-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from ctscroll.errors import MaskError


class MaskKind(str, Enum):
    """Mask families an encoder layer can be configured with."""

    GLOBAL = "global"
    CAUSAL = "causal"
    SWA_CAU_CRA = "swa_cau_cra"
    SWA_CRA_CAU = "swa_cra_cau"
    SWA_SYMMETRIC = "swa_symmetric"


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """An n×n boolean matrix of allowed (query, key) pairs."""

    n: int
    allowed: np.ndarray

    def __post_init__(self) -> None:
        if self.allowed.shape != (self.n, self.n):
            raise MaskError(f"Mask matrix shape {self.allowed.shape} does not match n={self.n}")
        if not np.all(np.diagonal(self.allowed)):
            raise MaskError("Every token must be allowed to attend to itself")
        self.allowed.setflags(write=False)

    def bias(self, dtype: np.dtype | type = np.float64) -> np.ndarray:
        """Additive form: 0 where allowed, -inf where blocked."""
        return np.where(self.allowed, 0.0, -np.inf).astype(dtype)

    def as_int(self) -> np.ndarray:
        return self.allowed.astype(np.int8)

    def to_text(self) -> str:
        """0/1 grid, one row per line, used for golden files."""
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.allowed)


def _offsets(n: int) -> np.ndarray:
    """Matrix of i - j."""
    idx = np.arange(n)
    return np.subtract.outer(idx, idx)


def _check(n: int, q: int | None = None) -> None:
    if n < 1:
        raise MaskError(f"Token count must be ≥ 1, got n={n}")
    if q is not None and q < 1:
        raise MaskError(f"Window size must be ≥ 1, got q={q}")


def make_global_mask(n: int) -> AttentionMask:
    _check(n)
    return AttentionMask(n, np.ones((n, n), dtype=bool))


def make_causal_mask(n: int) -> AttentionMask:
    _check(n)
    return AttentionMask(n, _offsets(n) >= 0)


def make_swa_cau_cra_mask(n: int, q: int) -> AttentionMask:
    """Self plus the q-1 preceding tokens (caudal → cranial scrolling)."""
    _check(n, q)
    d = _offsets(n)
    return AttentionMask(n, (d >= 0) & (d < q))


def make_swa_cra_cau_mask(n: int, q: int) -> AttentionMask:
    """Self plus the q-1 following tokens (cranial → caudal scrolling)."""
    _check(n, q)
    d = -_offsets(n)
    return AttentionMask(n, (d >= 0) & (d < q))


def make_swa_symmetric_mask(n: int, q: int) -> AttentionMask:
    """Centered band of half-width floor((q-1)/2)."""
    _check(n, q)
    return AttentionMask(n, np.abs(_offsets(n)) <= (q - 1) // 2)


@lru_cache(maxsize=256)
def make_mask(kind: MaskKind | str, n: int, q: int = 1) -> AttentionMask:
    """Dispatch on mask family; `q` is ignored for global and causal masks."""
    kind = MaskKind(kind)
    if kind is MaskKind.GLOBAL:
        return make_global_mask(n)
    if kind is MaskKind.CAUSAL:
        return make_causal_mask(n)
    if kind is MaskKind.SWA_CAU_CRA:
        return make_swa_cau_cra_mask(n, q)
    if kind is MaskKind.SWA_CRA_CAU:
        return make_swa_cra_cau_mask(n, q)
    return make_swa_symmetric_mask(n, q)
