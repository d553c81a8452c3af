"""Linear warm-up followed by cosine decay to zero."""

from __future__ import annotations

import logging
import math

from pydantic import BaseModel, Field, model_validator

from ctscroll.errors import ConfigError

logger = logging.getLogger(__name__)


class ScheduleConfig(BaseModel):
    warmup_steps: int = Field(default=200, gt=0)
    total_steps: int = Field(default=2000, gt=0)
    max_lr: float = Field(default=1e-3, gt=0)

    @model_validator(mode="after")
    def _check(self) -> ScheduleConfig:
        if not self.warmup_steps < self.total_steps:
            raise ValueError(f"warmup_steps ({self.warmup_steps}) must be < total_steps ({self.total_steps})")
        return self

    @classmethod
    def full_scale(cls) -> ScheduleConfig:
        """100k steps, 20k warm-up, peak 1e-4."""
        return cls(warmup_steps=20_000, total_steps=100_000, max_lr=1e-4)


def lr_at(step: int, sched: ScheduleConfig) -> float:
    if step < 0:
        raise ConfigError(f"Schedule step must be ≥ 0, got {step}")
    if step > sched.total_steps:
        logger.warning("Step %d is past the schedule end (%d); lr clamped to 0", step, sched.total_steps)
        return 0.0
    w, t = sched.warmup_steps, sched.total_steps
    if step <= w:
        return sched.max_lr * step / w
    return sched.max_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / (t - w)))
