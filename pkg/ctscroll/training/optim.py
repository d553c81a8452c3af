"""AdamW with decoupled weight decay."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field

from ctscroll.errors import NumericError, ShapeError
from ctscroll.nn.tensor import Parameter


class AdamWConfig(BaseModel):
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)


@dataclass
class OptimizerState:
    """First/second moments keyed by parameter name, plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    config: AdamWConfig = field(default_factory=AdamWConfig)

    @classmethod
    def init(cls, params: Mapping[str, Parameter], config: AdamWConfig | None = None) -> OptimizerState:
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            config=config or AdamWConfig(),
        )


def adamw_step(
    params: Mapping[str, Parameter],
    grads: Mapping[str, np.ndarray | None],
    state: OptimizerState,
    lr: float,
) -> OptimizerState:
    """Update `params` in place; missing gradients count as zero."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericError(f"Non-finite gradient for {name}: {bad}/{g.size} entries at step {state.t + 1}")

    cfg = state.config
    state.t += 1
    bias1 = 1.0 - cfg.beta1 ** state.t
    bias2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"{name}: parameter {p.shape}, gradient {g.shape}, moment {state.m[name].shape}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = (p.data - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)).astype(
            p.dtype, copy=False
        )
    return state
