"""Finite-difference gradient checks for every differentiable op, in float64."""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import NamedTuple

import numpy as np

from ctscroll.errors import ConfigError
from ctscroll.model.config import BackboneSpec, CTScrollConfig
from ctscroll.model.network import CTScroll
from ctscroll.nn import functional as F
from ctscroll.nn.gradcheck import GradCheckResult, gradcheck
from ctscroll.nn.layers import EncoderLayer, MultiHeadAttention, encoder_forward, masked_mha
from ctscroll.nn.masks import MaskKind, make_mask
from ctscroll.nn.module import Module
from ctscroll.nn.tensor import Parameter, Tensor
from ctscroll.training.loss import bce_with_logits

logger = logging.getLogger(__name__)

DTYPE = np.float64


class GradCase(NamedTuple):
    fn: Callable[[], Tensor]
    inputs: dict[str, Tensor]


def _leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, size=shape).astype(DTYPE))


def _projected(y: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Scalar ⟨y, R⟩ with a fixed random R so every output coordinate matters."""
    r = Tensor(rng.normal(size=y.shape).astype(DTYPE))
    return lambda out: (out * r).sum()


def _with_params(module: Module, **extra: Tensor) -> dict[str, Tensor]:
    return {**extra, **dict(module.named_parameters())}


# ── Cases ───────────────────────────────────────────────────────
def _linear(rng: np.random.Generator) -> GradCase:
    x, w, b = _leaf(rng, 3, 5), _leaf(rng, 5, 4), _leaf(rng, 4)
    proj = _projected(F.linear(x, w, b), rng)
    return GradCase(lambda: proj(F.linear(x, w, b)), {"x": x, "weight": w, "bias": b})


def _layer_norm(rng: np.random.Generator) -> GradCase:
    x, gamma, beta = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    proj = _projected(x, rng)
    return GradCase(lambda: proj(F.layer_norm(x, gamma, beta)), {"x": x, "gamma": gamma, "beta": beta})


def _geglu_ffn(rng: np.random.Generator) -> GradCase:
    x = _leaf(rng, 3, 6)
    wg, wv, wo = _leaf(rng, 6, 8, scale=0.5), _leaf(rng, 6, 8, scale=0.5), _leaf(rng, 8, 6, scale=0.5)
    bg, bv, bo = _leaf(rng, 8), _leaf(rng, 8), _leaf(rng, 6)
    proj = _projected(x, rng)
    return GradCase(
        lambda: proj(F.geglu_ffn(x, wg, wv, wo, bg, bv, bo)),
        {"x": x, "w_gate": wg, "w_value": wv, "w_out": wo, "b_gate": bg, "b_value": bv, "b_out": bo},
    )


def _masked_mha(rng: np.random.Generator) -> GradCase:
    attn = MultiHeadAttention(8, 2, rng, DTYPE)
    x = _leaf(rng, 5, 8)
    mask = make_mask(MaskKind.SWA_CAU_CRA, 5, 2)
    proj = _projected(x, rng)
    return GradCase(lambda: proj(masked_mha(x, attn, mask)[0]), _with_params(attn, x=x))


def _encoder(prenorm: bool) -> Callable[[np.random.Generator], GradCase]:
    def build(rng: np.random.Generator) -> GradCase:
        layer = EncoderLayer(8, 2, 16, MaskKind.SWA_CRA_CAU, rng, q=2, prenorm=prenorm, dtype=DTYPE)
        x = _leaf(rng, 2, 5, 8)
        proj = _projected(x, rng)
        return GradCase(lambda: proj(encoder_forward(x, layer)), _with_params(layer, x=x))

    return build


def _conv2d(rng: np.random.Generator) -> GradCase:
    x, w, b = _leaf(rng, 2, 3, 6, 6), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    out = F.conv2d(x, w, b, stride=2, padding=1)
    proj = _projected(out, rng)
    return GradCase(lambda: proj(F.conv2d(x, w, b, stride=2, padding=1)), {"x": x, "weight": w, "bias": b})


def _conv3d(rng: np.random.Generator) -> GradCase:
    x, w, b = _leaf(rng, 1, 2, 4, 5, 5), _leaf(rng, 3, 2, 3, 3, 3), _leaf(rng, 3)
    stride, pad = (1, 2, 2), (1, 1, 1)
    proj = _projected(F.conv3d(x, w, b, stride, pad), rng)
    return GradCase(lambda: proj(F.conv3d(x, w, b, stride, pad)), {"x": x, "weight": w, "bias": b})


def _max_pool2d(rng: np.random.Generator) -> GradCase:
    x = _leaf(rng, 1, 2, 7, 7)
    proj = _projected(F.max_pool2d(x, 3, 2, 1), rng)
    return GradCase(lambda: proj(F.max_pool2d(x, 3, 2, 1)), {"x": x})


def _gap(rng: np.random.Generator) -> GradCase:
    fm = _leaf(rng, 2, 3, 4, 4)
    proj = _projected(F.global_avg_pool(fm), rng)
    return GradCase(lambda: proj(F.global_avg_pool(fm)), {"fm": fm})


def _bce(rng: np.random.Generator) -> GradCase:
    logits = _leaf(rng, 4, 3, scale=2.0)
    labels = rng.integers(0, 2, size=(4, 3))
    return GradCase(lambda: bce_with_logits(logits, labels), {"logits": logits})


def micro_config(**changes: object) -> CTScrollConfig:
    """Smallest config exercising every stage: 2 triplets of 16² slices, d = 16."""
    base: dict[str, object] = {
        "n_triplets": 2,
        "slice_hw": 16,
        "d_model": 16,
        "backbone": BackboneSpec(channels=(4, 8, 8, 16), blocks=(1, 1, 1, 1), stem_channels=4,
                                 stem_kernel=3, stem_stride=1, stem_pool=True),
        "heads": 2,
        "d_ff": 32,
        "q": 1,
        "n_labels": 4,
    }
    base.update(changes)
    return CTScrollConfig.model_validate(base)


def _toy_model(rng: np.random.Generator) -> GradCase:
    model = CTScroll(micro_config(), seed=int(rng.integers(1 << 31)), dtype=DTYPE)
    # Zero-initialised residual scales would hide the branch gradients.
    for name, p in model.named_parameters():
        if name.endswith("branch_scale"):
            p.data[...] = 0.5
    x = rng.normal(size=(2, 2, 3, 16, 16)).astype(DTYPE)
    labels = rng.integers(0, 2, size=(2, 4))
    return GradCase(lambda: bce_with_logits(model(x), labels), dict(model.named_parameters()))


GRADCHECK_CASES: dict[str, Callable[[np.random.Generator], GradCase]] = {
    "linear": _linear,
    "layer_norm": _layer_norm,
    "geglu_ffn": _geglu_ffn,
    "masked_mha": _masked_mha,
    "encoder_forward": _encoder(prenorm=False),
    "encoder_forward_prenorm": _encoder(prenorm=True),
    "conv2d": _conv2d,
    "conv3d": _conv3d,
    "max_pool2d": _max_pool2d,
    "gap": _gap,
    "bce_with_logits": _bce,
    "toy_model": _toy_model,
}


def run_gradchecks(
    names: list[str] | None = None,
    seed: int = 0,
    eps: float = 1e-6,
    tol: float = 1e-5,
    max_entries: int | None = 24,
) -> dict[str, GradCheckResult]:
    """Run the named cases (all by default); at most `max_entries` coordinates per input."""
    selected = names or list(GRADCHECK_CASES)
    unknown = [n for n in selected if n not in GRADCHECK_CASES]
    if unknown:
        raise ConfigError(f"Unknown gradcheck case(s): {unknown}")
    results = {}
    order = list(GRADCHECK_CASES)
    for name in selected:
        case = GRADCHECK_CASES[name](np.random.default_rng([seed, order.index(name)]))
        results[name] = gradcheck(case.fn, case.inputs, eps=eps, tol=tol, max_entries=max_entries, seed=seed)
        level = logging.INFO if results[name].passed else logging.ERROR
        logger.log(level, "gradcheck %-24s rel. error %.3e", name, results[name].max_rel_error)
    return results
