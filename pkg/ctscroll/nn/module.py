"""Parameter containers: named traversal, state dicts and initializers."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from typing import Any

import numpy as np

from ctscroll.errors import ShapeError
from ctscroll.nn.tensor import Parameter

logger = logging.getLogger(__name__)


class Module:
    """Base class; parameters are discovered from attributes in assignment order."""

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into matching parameters; returns the names that were loaded."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise ShapeError(f"State dict mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        loaded = []
        for name, value in state.items():
            if name not in own:
                continue
            param = own[name]
            if param.shape != tuple(value.shape):
                raise ShapeError(f"{name}: expected shape {param.shape}, got {tuple(value.shape)}")
            param.data = np.array(value, dtype=param.dtype, copy=True)
            loaded.append(name)
        return loaded

    def to(self, dtype: np.dtype | type | str) -> Module:
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


# ── Initializers ────────────────────────────────────────────────
def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               dtype: Any = np.float32) -> Parameter:
    bound = math.sqrt(6.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                   dtype: Any = np.float32) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


def zeros(shape: tuple[int, ...], dtype: Any = np.float32) -> Parameter:
    return Parameter(np.zeros(shape, dtype=dtype))


def ones(shape: tuple[int, ...], dtype: Any = np.float32) -> Parameter:
    return Parameter(np.ones(shape, dtype=dtype))
