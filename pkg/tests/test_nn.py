"""Tests for the autodiff engine, differentiable ops, layers and gradient checks."""

from __future__ import annotations

import threading

import numpy as np
import pytest
from scipy.signal import correlate2d

from ctscroll.errors import ConfigError, MaskError, ShapeError
from ctscroll.harness.diagnostics import GRADCHECK_CASES, run_gradchecks
from ctscroll.nn import functional as F
from ctscroll.nn.gradcheck import gradcheck, relative_error
from ctscroll.nn.layers import EncoderLayer, Linear, MultiHeadAttention, encoder_param_count, masked_mha
from ctscroll.nn.masks import MaskKind, make_mask
from ctscroll.nn.tensor import Parameter, Tensor, is_grad_enabled, no_grad


class TestTensor:

    def test_product_gradient(self):
        x, y = Parameter([1.0, 2.0]), Parameter([3.0, 4.0])
        (x * y).sum().backward()
        assert x.grad.tolist() == [3.0, 4.0]
        assert y.grad.tolist() == [1.0, 2.0]

    def test_broadcast_gradient_is_summed(self):
        x, b = Parameter(np.ones((2, 3))), Parameter(np.zeros(3))
        (x + b).sum().backward()
        assert b.grad.tolist() == [2.0, 2.0, 2.0]

    def test_reused_leaf_accumulates(self):
        x = Parameter([3.0])
        (x * x).sum().backward()
        assert x.grad.tolist() == [6.0]

    def test_indexing_scatters_gradient(self):
        x = Parameter([1.0, 2.0, 3.0])
        x[np.array([0, 0, 2])].sum().backward()
        assert x.grad.tolist() == [2.0, 0.0, 1.0]

    def test_no_grad_builds_no_graph(self):
        x = Parameter([1.0])
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert is_grad_enabled()

    def test_no_grad_is_per_thread(self):
        seen: list[bool] = []
        with no_grad():
            worker = threading.Thread(target=lambda: seen.append(is_grad_enabled()))
            worker.start()
            worker.join()
            assert not is_grad_enabled()
        assert seen == [True]

    def test_backward_needs_scalar_or_grad(self):
        x = Parameter([1.0, 2.0])
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError, match="inner dims"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_float32_stays_float32(self):
        x = Parameter(np.ones(3, dtype=np.float32))
        assert (x * 0.5 + 1.0).dtype == np.float32


class TestFunctional:

    def test_linear_vector(self):
        y = F.linear(Tensor([1.0, 2.0]), Tensor([[1.0], [1.0]]))
        assert y.data.tolist() == [3.0]

    def test_linear_dim_mismatch(self):
        with pytest.raises(ShapeError):
            F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))

    def test_layer_norm_without_eps(self):
        y = F.layer_norm(Tensor([1.0, -1.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=0.0)
        np.testing.assert_allclose(y.data, [1.0, -1.0])

    def test_gelu_values(self):
        y = F.gelu(Tensor([0.0, 1.0]))
        np.testing.assert_allclose(y.data, [0.0, 0.841345], atol=1e-6)

    def test_geglu_scalar(self):
        one = Tensor([[1.0]])
        y = F.geglu_ffn(Tensor([[1.0]]), one, one, one)
        assert y.data[0, 0] == pytest.approx(0.841345, abs=1e-6)

    def test_attention_single_token_returns_value(self):
        q, k, v = Tensor([[0.3, -1.0]]), Tensor([[2.0, 0.5]]), Tensor([[7.0, -3.0]])
        out, weights = F.scaled_dot_product_attention(q, k, v, make_mask(MaskKind.GLOBAL, 1))
        np.testing.assert_allclose(out.data, v.data)
        assert weights.data.tolist() == [[1.0]]

    def test_identical_keys_give_uniform_weights(self, rng):
        q = Tensor(rng.normal(size=(4, 3)))
        k = Tensor(np.tile(rng.normal(size=(1, 3)), (4, 1)))
        v = Tensor(rng.normal(size=(4, 3)))
        _, weights = F.scaled_dot_product_attention(q, k, v, make_mask(MaskKind.CAUSAL, 4))
        for i in range(4):
            np.testing.assert_allclose(weights.data[i, : i + 1], 1.0 / (i + 1))

    @pytest.mark.parametrize("kind", list(MaskKind))
    def test_attention_rows_normalised_and_blocked_exactly_zero(self, kind, rng):
        mask = make_mask(kind, 6, 3)
        scores = Tensor(rng.normal(scale=5.0, size=(2, 6, 6)))
        weights = F.masked_softmax(scores, mask).data
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(weights[:, ~mask.allowed] == 0.0)

    def test_softmax_large_scores_stay_finite(self):
        weights = F.masked_softmax(Tensor([[1000.0, 0.0], [0.0, 1000.0]]), make_mask(MaskKind.GLOBAL, 2))
        assert np.all(np.isfinite(weights.data))

    def test_conv2d_box_filter(self):
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
        assert out.data[0, 0].tolist() == [[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]]

    def test_conv2d_stride(self):
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), stride=2, padding=1)
        assert out.data[0, 0].tolist() == [[4.0, 4.0], [4.0, 4.0]]

    def test_conv2d_matches_cross_correlation(self, rng):
        x, w = rng.normal(size=(6, 7)), rng.normal(size=(3, 3))
        out = F.conv2d(Tensor(x[None, None]), Tensor(w[None, None]), Tensor([0.5]))
        np.testing.assert_allclose(out.data[0, 0], correlate2d(x, w, mode="valid") + 0.5)

    def test_conv3d_pointwise_mixes_channels(self, rng):
        x, w = rng.normal(size=(1, 3, 2, 4, 4)), rng.normal(size=(5, 3, 1, 1, 1))
        out = F.conv3d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data, np.einsum("oc,ncdhw->nodhw", w[..., 0, 0, 0], x))

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            F.conv2d(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 3, 1, 1))))

    def test_max_pool(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        assert F.max_pool2d(x, 2, 2).data[0, 0].tolist() == [[5.0, 7.0], [13.0, 15.0]]

    def test_global_avg_pool(self):
        fm = Tensor(np.array([[[[1.0, 3.0], [5.0, 7.0]]]]))
        assert F.global_avg_pool(fm).data.tolist() == [[4.0]]

    def test_stack_gradient(self):
        a, b = Parameter([1.0, 2.0]), Parameter([3.0, 4.0])
        (F.stack([a, b], axis=0) * Tensor([[1.0, 1.0], [2.0, 2.0]])).sum().backward()
        assert a.grad.tolist() == [1.0, 1.0]
        assert b.grad.tolist() == [2.0, 2.0]


class TestLayers:

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ShapeError, match="divisible"):
            MultiHeadAttention(10, 3, rng)

    def test_attention_weights_per_head(self, rng):
        attn = MultiHeadAttention(8, 2, rng, np.float64)
        mask = make_mask(MaskKind.SWA_CAU_CRA, 5, 2)
        out, weights = masked_mha(Tensor(rng.normal(size=(3, 5, 8))), attn, mask)
        assert out.shape == (3, 5, 8)
        assert weights.shape == (3, 2, 5, 5)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)
        assert np.all(weights.data[..., ~mask.allowed] == 0.0)

    def test_mask_length_must_match(self, rng):
        attn = MultiHeadAttention(4, 2, rng)
        with pytest.raises(ShapeError):
            masked_mha(Tensor(np.ones((3, 4))), attn, make_mask(MaskKind.GLOBAL, 4))

    @pytest.mark.parametrize("prenorm", [False, True])
    def test_encoder_batches_independently(self, rng, prenorm):
        layer = EncoderLayer(8, 2, 16, MaskKind.SWA_CRA_CAU, rng, q=3, prenorm=prenorm, dtype=np.float64)
        x = rng.normal(size=(2, 6, 8))
        batched = layer(Tensor(x)).data
        for b in range(2):
            np.testing.assert_allclose(batched[b], layer(Tensor(x[b])).data, atol=1e-10)

    def test_post_norm_output_is_normalised(self, rng):
        layer = EncoderLayer(8, 2, 16, MaskKind.GLOBAL, rng, dtype=np.float64)
        y = layer(Tensor(rng.normal(size=(5, 8)))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)

    def test_encoder_param_count_matches_layer(self, rng):
        layer = EncoderLayer(8, 2, 16, MaskKind.GLOBAL, rng)
        assert layer.num_parameters() == encoder_param_count(8, 16) == 744

    def test_full_scale_encoder_size(self):
        assert encoder_param_count(512, 2048) == 4_203_008

    def test_window_must_be_positive(self, rng):
        with pytest.raises(MaskError, match="Window"):
            EncoderLayer(8, 2, 16, MaskKind.SWA_CAU_CRA, rng, q=0)

    def test_state_dict_strict(self, rng):
        layer = Linear(3, 2, rng)
        with pytest.raises(ShapeError, match="mismatch"):
            layer.load_state_dict({"weight": np.zeros((3, 2))})
        loaded = layer.load_state_dict({"weight": np.zeros((3, 2))}, strict=False)
        assert loaded == ["weight"]
        assert not layer.weight.data.any()

    def test_state_dict_shape_check(self, rng):
        layer = Linear(3, 2, rng)
        with pytest.raises(ShapeError, match="expected shape"):
            layer.load_state_dict({"weight": np.zeros((2, 3)), "bias": np.zeros(2)})

    def test_cast_to_double(self, rng):
        layer = Linear(3, 2, rng).to(np.float64)
        assert all(p.dtype == np.float64 for p in layer.parameters())


class TestGradCheck:

    @pytest.mark.parametrize("case", list(GRADCHECK_CASES))
    def test_case_passes(self, case):
        result = run_gradchecks([case])[case]
        assert result.passed, f"{case}: {result.per_input}"
        assert result.checked_entries > 0

    def test_wrong_backward_is_caught(self):
        x = Parameter(np.array([0.5, -1.0, 2.0]))

        def square_with_bad_grad() -> Tensor:
            return Tensor.from_op(x.data ** 2, (x,), lambda g: (g * x.data,)).sum()

        assert not gradcheck(square_with_bad_grad, {"x": x}).passed

    def test_relative_error_of_zeros(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0

    def test_relative_error_ignores_roundoff_on_zero_gradient(self):
        assert relative_error(np.array([1e-18]), np.array([-2e-11])) < 1e-5
        assert relative_error(np.array([1.0]), np.array([2.0])) == pytest.approx(1 / 3)

    def test_input_with_vanishing_gradient_passes(self):
        # A constant shift cancels after centring, like a key bias under softmax.
        x = Parameter(np.array([0.3, -1.2, 2.0, 0.7]))
        shift = Parameter(np.array([0.4]))
        weights = np.array([1.5, -0.5, 2.0, 0.25])

        def centred() -> Tensor:
            y = x + shift
            return ((y - y.mean()) * weights).sum()

        result = gradcheck(centred, {"x": x, "shift": shift})
        assert result.passed, result.per_input
        assert abs(shift.grad).max() < 1e-12

    def test_unknown_case(self):
        with pytest.raises(ConfigError, match="Unknown"):
            run_gradchecks(["softmax_of_everything"])

    def test_cases_are_reproducible(self):
        first = run_gradchecks(["linear", "layer_norm"], seed=3)
        second = run_gradchecks(["layer_norm", "linear"], seed=3)
        for name in first:
            assert first[name].max_rel_error == second[name].max_rel_error
