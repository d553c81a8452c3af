"""Token-level Jacobian support of each interaction variant."""

from __future__ import annotations

import numpy as np
import pytest

from ctscroll.harness.diagnostics import micro_config
from ctscroll.model.config import Interactions
from ctscroll.model.interactions import build_interactions
from ctscroll.nn.gradcheck import token_jacobian
from ctscroll.nn.layers import EncoderLayer
from ctscroll.nn.masks import MaskKind, make_mask

N_TOKENS = 8


def _support(variant: Interactions, q: int = 3) -> np.ndarray:
    cfg = micro_config(interactions=variant, q=q, d_model=8, heads=2, d_ff=16,
                       backbone={"channels": (8,), "blocks": (1,), "stem_channels": 4})
    module = build_interactions(cfg, np.random.default_rng(0), np.float64)
    x = np.random.default_rng(1).normal(size=(N_TOKENS, cfg.d_model))
    return token_jacobian(module, x)


def _encoder_support(kind: MaskKind, n: int, q: int, prenorm: bool = False) -> np.ndarray:
    layer = EncoderLayer(8, 2, 16, kind, np.random.default_rng(4), q=q, prenorm=prenorm, dtype=np.float64)
    x = np.random.default_rng(5).normal(size=(n, 8))
    return token_jacobian(layer, x)


def _band(n: int, half_width: int) -> np.ndarray:
    idx = np.arange(n)
    return np.abs(np.subtract.outer(idx, idx)) <= half_width


class TestReceptiveField:

    def test_none_is_identity(self):
        support = _support(Interactions.NONE)
        np.testing.assert_allclose(support, np.eye(N_TOKENS), atol=1e-6)

    @pytest.mark.parametrize("q", [1, 2, 3])
    def test_local_only_reaches_q_minus_one(self, q):
        support = _support(Interactions.LOCAL_ONLY, q)
        band = _band(N_TOKENS, q - 1)
        assert np.all(support[band] > 0.0)
        assert np.all(support[~band] == 0.0)

    def test_causal_is_lower_triangular(self):
        support = _support(Interactions.CAUSAL)
        lower = np.tril(np.ones((N_TOKENS, N_TOKENS), dtype=bool))
        assert np.all(support[lower] > 0.0)
        assert np.all(support[~lower] == 0.0)

    @pytest.mark.parametrize("variant", [
        Interactions.GLOBAL_ONLY, Interactions.GLOBAL_PLUS_LOCAL, Interactions.SCROLLING_BLOCK,
    ])
    def test_global_stage_reaches_everything(self, variant):
        assert np.all(_support(variant) > 0.0)

    def test_local_only_misses_long_range_pairs(self):
        # Markers 18 slices apart sit at least 6 triplets apart.
        support = _support(Interactions.LOCAL_ONLY, q=3)
        assert support[0, 6] == 0.0 and support[6, 0] == 0.0


class TestSingleEncoder:

    def test_cau_cra_q2_reads_self_and_predecessor(self):
        support = _encoder_support(MaskKind.SWA_CAU_CRA, n=4, q=2)
        expected = np.array([
            [1, 0, 0, 0],
            [1, 1, 0, 0],
            [0, 1, 1, 0],
            [0, 0, 1, 1],
        ], dtype=bool)
        assert np.all(support[expected] > 1e-9)
        assert np.all(support[~expected] == 0.0)

    @pytest.mark.parametrize("prenorm", [False, True])
    @pytest.mark.parametrize(("kind", "q"), [
        (MaskKind.GLOBAL, 1),
        (MaskKind.CAUSAL, 1),
        (MaskKind.SWA_CAU_CRA, 3),
        (MaskKind.SWA_CRA_CAU, 3),
        (MaskKind.SWA_SYMMETRIC, 5),
    ])
    def test_support_equals_mask(self, kind, q, prenorm):
        allowed = make_mask(kind, N_TOKENS, q).allowed
        support = _encoder_support(kind, N_TOKENS, q, prenorm)
        assert np.all(support[allowed] > 1e-9)
        assert np.all(support[~allowed] == 0.0)
