"""Minimal differentiable numeric core: tensors, ops, masks, layers, gradient checks."""

from ctscroll.nn.masks import AttentionMask, MaskKind, make_mask
from ctscroll.nn.module import Module
from ctscroll.nn.tensor import Parameter, Tensor, no_grad

__all__ = ["AttentionMask", "MaskKind", "Module", "Parameter", "Tensor", "make_mask", "no_grad"]
