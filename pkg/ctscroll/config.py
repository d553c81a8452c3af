"""CT-Scroll runtime settings via Pydantic settings."""

from __future__ import annotations

import logging
from enum import Enum
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Precision(str, Enum):
    """Floating point width used for parameters and activations."""

    SINGLE = "float32"
    DOUBLE = "float64"


class CTScrollSettings(BaseSettings):
    """Application settings loaded from env vars / .env file."""

    model_config = SettingsConfigDict(
        env_prefix="CTSCROLL_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # ── Training ────────────────────────────────────────────────
    precision: Precision = Field(
        default=Precision.SINGLE,
        description="Dtype of parameters during training (gradient checks always use float64)",
    )
    checkpoint_every: int = Field(
        default=500,
        ge=1,
        description="Write a CKPT snapshot every K optimizer steps",
    )
    prefetch_depth: int = Field(
        default=0,
        ge=0,
        le=64,
        description="Batches assembled ahead of the optimizer step. 0 = synchronous",
    )
    default_seed: int = Field(default=0, ge=0)

    # ── Harness ─────────────────────────────────────────────────
    q_default: int = Field(
        default=3,
        ge=1,
        description="Window size the phantom long-range rule is calibrated against",
    )

    # ── General ─────────────────────────────────────────────────
    log_level: str = Field(default="INFO")

    # ── Derived helpers ─────────────────────────────────────────
    @property
    def long_range_distance(self) -> int:
        """Minimum z-distance (slices) between the two blobs of a long-range pair."""
        return 2 * self.q_default * 3


def configure_logging(level: str = "INFO") -> None:
    """Set up structured logging."""
    fmt = "%(asctime)s │ %(name)s │ %(levelname)-7s │ %(message)s"
    logging.basicConfig(format=fmt, datefmt="%H:%M:%S", level=getattr(logging, level.upper()))
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


@lru_cache(maxsize=1)
def get_settings() -> CTScrollSettings:
    """Singleton settings accessor."""
    return CTScrollSettings()
