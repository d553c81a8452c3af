"""Central finite-difference oracles for gradients and token-level Jacobians."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ctscroll.nn.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    """Outcome of comparing analytic and numerical gradients."""

    max_rel_error: float
    per_input: dict[str, float]
    checked_entries: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """
    ‖a − n‖ / max(‖a‖ + ‖n‖, floor).

    The floor turns the measure absolute for vanishing gradients, where both
    estimates are round-off and a plain ratio would report 1.
    """
    denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _sample_indices(size: int, max_entries: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    eps: float = 1e-6,
    tol: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare backprop against central differences for a scalar-valued `fn`.

    `fn` must read the tensors in `inputs` (which are perturbed in place). At most
    `max_entries` randomly chosen coordinates per input are checked.
    """
    rng = np.random.default_rng(seed)
    for t in inputs.values():
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    out = fn()
    out.backward()

    per_input: dict[str, float] = {}
    checked = 0
    for name, t in inputs.items():
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = _sample_indices(flat.size, max_entries, rng)
        numeric = np.empty(idx.size, dtype=np.float64)
        with no_grad():
            for k, i in enumerate(idx):
                original = flat[i]
                flat[i] = original + eps
                plus = float(fn().data.sum())
                flat[i] = original - eps
                minus = float(fn().data.sum())
                flat[i] = original
                numeric[k] = (plus - minus) / (2.0 * eps)
        analytic = analytic_full.reshape(-1)[idx].astype(np.float64)
        per_input[name] = relative_error(analytic, numeric)
        checked += idx.size
        logger.debug("gradcheck %s: %d entries, rel. error %.3e", name, idx.size, per_input[name])

    return GradCheckResult(
        max_rel_error=max(per_input.values(), default=0.0),
        per_input=per_input,
        checked_entries=checked,
        tolerance=tol,
    )


def token_jacobian(fn: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """
    Token-level Jacobian magnitude of a sequence map (n, d) → (n, d).

    Entry (i, j) is max over feature pairs of |∂y_i / ∂x_j|, estimated by central
    differences. Exact zeros survive because blocked tokens never reach the output.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    n, d = x.shape
    support = np.zeros((n, n), dtype=np.float64)
    with no_grad():
        for j in range(n):
            for f in range(d):
                plus_in, minus_in = x.copy(), x.copy()
                plus_in[j, f] += eps
                minus_in[j, f] -= eps
                diff = (fn(Tensor(plus_in)).data - fn(Tensor(minus_in)).data) / (2.0 * eps)
                support[:, j] = np.maximum(support[:, j], np.abs(diff).max(axis=-1))
    return support
