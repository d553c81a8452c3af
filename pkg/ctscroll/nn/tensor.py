"""Reverse-mode automatic differentiation over numpy arrays."""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np

from ctscroll.errors import ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

# Per thread, so concurrent runs can score and train side by side.
_state = threading.local()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (inference, finite differences)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcasting added to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_array(value: Any) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """An n-dimensional array that records the operations producing it."""

    __array_ufunc__ = None  # make ndarray ⊕ Tensor dispatch to Tensor's reflected ops

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None) -> None:
        self.data: np.ndarray = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._retain = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        """Wrap the result of an op; `backward` maps the output grad to one grad per parent."""
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # ── Introspection ───────────────────────────────────────────
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def retain_grad(self) -> Tensor:
        """Keep `.grad` on this intermediate node after backward."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # ── Backpropagation ─────────────────────────────────────────
    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`."""
        if not self.requires_grad:
            raise ShapeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"grad must be given for non-scalar output of shape {self.shape}")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}

        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf or node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ── Arithmetic ──────────────────────────────────────────────
    def _coerce(self, other: Any) -> Tensor:
        """Python scalars adopt this tensor's dtype so float32 graphs stay float32."""
        if isinstance(other, Tensor):
            return other
        if isinstance(other, (int, float)):
            return Tensor(np.asarray(other, dtype=self.dtype))
        return Tensor(other)

    def __add__(self, other: Any) -> Tensor:
        other = self._coerce(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other: Any) -> Tensor:
        return self + (-self._coerce(other))

    def __rsub__(self, other: Any) -> Tensor:
        return self._coerce(other) + (-self)

    def __mul__(self, other: Any) -> Tensor:
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> Tensor:
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b,
            (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __matmul__(self, other: Any) -> Tensor:
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs ≥2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

        def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

        return Tensor.from_op(a @ b, (self, other), backward)

    # ── Shape manipulation ──────────────────────────────────────
    def __getitem__(self, index: Any) -> Tensor:
        shape, dtype = self.shape, self.dtype

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(original),)
        )

    def transpose(self, *axes: int) -> Tensor:
        axes_t = tuple(axes) if axes else tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes_t))
        return Tensor.from_op(
            self.data.transpose(axes_t), (self,), lambda g: (g.transpose(inverse),)
        )

    def swapaxes(self, a: int, b: int) -> Tensor:
        return Tensor.from_op(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    # ── Reductions and pointwise ────────────────────────────────
    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def relu(self) -> Tensor:
        mask = self.data > 0
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,))


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: Any, name: str | None = None) -> None:
        super().__init__(data, requires_grad=True, name=name)
