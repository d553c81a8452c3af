"""Training loop: forward → BCE → backward → AdamW, with checkpoints and a loss trace."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from ctscroll.config import get_settings
from ctscroll.errors import NumericError, VolumeIOError
from ctscroll.model.checkpoint import save_checkpoint
from ctscroll.model.config import CTScrollConfig
from ctscroll.model.network import CTScroll
from ctscroll.training.data import ShuffledBatches, iter_batches
from ctscroll.training.loss import bce_with_logits
from ctscroll.training.optim import AdamWConfig, OptimizerState, adamw_step
from ctscroll.training.schedule import ScheduleConfig, lr_at

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "lr", "loss"]


class TrainConfig(BaseModel):
    """Desk-scale defaults: the full recipe scaled down 50×."""

    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    optimizer: AdamWConfig = Field(default_factory=AdamWConfig)
    checkpoint_every: int | None = Field(default=None, ge=1)
    prefetch_depth: int | None = Field(default=None, ge=0)


@dataclass
class TrainResult:
    model: CTScroll
    checkpoint: Path
    loss_csv: Path
    losses: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)


def _write_trace(rows: list[dict[str, float]], path: Path) -> None:
    try:
        pd.DataFrame(rows, columns=LOSS_COLUMNS).astype({"step": int}).to_csv(path, index=False)
    except OSError as exc:
        raise VolumeIOError(f"Cannot write loss trace {path}: {exc}") from exc


def plot_loss(loss_csv: Path, out_path: Path) -> Path | None:
    """Render loss.png from a loss trace; skipped when matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib not installed, skipping loss plot")
        return None

    trace = pd.read_csv(loss_csv)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(trace["step"], trace["loss"], color="#4a90d9", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("BCE loss")
    ax.grid(alpha=0.3)
    lr_ax = ax.twinx()
    lr_ax.plot(trace["step"], trace["lr"], color="#e94560", linewidth=0.8, alpha=0.6)
    lr_ax.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def train_loop(
    model_cfg: CTScrollConfig,
    source: ShuffledBatches,
    train_cfg: TrainConfig,
    out_dir: str | Path,
    model: CTScroll | None = None,
) -> TrainResult:
    """
    Train from the seeded initialisation (or `model`) for `train_cfg.steps` steps.

    Writes `ckpt_<step>.json` every K steps, `final.json`, `loss.csv` and `loss.png`
    into `out_dir`. A non-finite loss or gradient writes `last_good.json` and raises
    NumericError.
    """
    settings = get_settings()
    every = train_cfg.checkpoint_every or settings.checkpoint_every
    depth = settings.prefetch_depth if train_cfg.prefetch_depth is None else train_cfg.prefetch_depth
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model = model or CTScroll(model_cfg, seed=train_cfg.seed, dtype=settings.precision.value)
    params = dict(model.named_parameters())
    state = OptimizerState.init(params, train_cfg.optimizer)
    rows: list[dict[str, float]] = []
    losses: list[float] = []
    loss_csv = out / "loss.csv"

    logger.info(
        "Training %s/%s for %d steps (batch %d, seed %d, %d parameters)",
        model_cfg.reduction.value, model_cfg.interactions.value, train_cfg.steps,
        train_cfg.batch_size, train_cfg.seed, model.num_parameters(),
    )
    horizon = train_cfg.schedule.total_steps
    if train_cfg.steps > horizon:
        logger.warning("%d steps exceed the schedule (%d); lr is 0 past its end", train_cfg.steps, horizon)
    step = 0
    for step, batch in enumerate(iter_batches(source, train_cfg.steps, depth), start=1):
        lr = lr_at(min(step, horizon), train_cfg.schedule)
        model.zero_grad()
        loss = bce_with_logits(model(batch.inputs), batch.labels)
        value = loss.item()
        if not np.isfinite(value):
            _abort(model, out, step - 1, rows, loss_csv, f"Non-finite loss {value} at step {step}")
        loss.backward()
        try:
            adamw_step(params, {n: p.grad for n, p in params.items()}, state, lr)
        except NumericError as exc:
            _abort(model, out, step - 1, rows, loss_csv, str(exc))

        rows.append({"step": step, "lr": lr, "loss": value})
        losses.append(value)
        if step % every == 0:
            save_checkpoint(model, out / f"ckpt_{step}.json", step=step)
            logger.info("step %d │ lr %.3e │ loss %.5f", step, lr, value)

    final = save_checkpoint(model, out / "final.json", step=step)
    _write_trace(rows, loss_csv)
    plot_loss(loss_csv, out / "loss.png")
    return TrainResult(model=model, checkpoint=final, loss_csv=loss_csv, losses=losses)


def _abort(model: CTScroll, out: Path, last_step: int, rows: list[dict[str, float]],
           loss_csv: Path, message: str) -> None:
    # adamw_step checks gradients before any update, so parameters are still those of `last_step`.
    path = save_checkpoint(model, out / "last_good.json", step=last_step)
    _write_trace(rows, loss_csv)
    logger.error("Training aborted: %s (last good checkpoint: %s)", message, path)
    raise NumericError(f"{message}; last good checkpoint written to {path}")
