"""Deterministic batch source with seeded per-epoch shuffles and ordered prefetch."""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Iterator
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ctscroll.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class TrainBatch:
    inputs: np.ndarray  # (B, n, 3, H, W)
    labels: np.ndarray  # (B, L) in {0, 1}
    indices: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.shape[0] < 1 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"Batch has {self.inputs.shape[0]} inputs and {self.labels.shape[0]} label rows")
        if not np.isin(self.labels, (0, 1)).all():
            raise ShapeError("Labels must be binary")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class ArrayDataset:
    """Preprocessed triplet stacks and their label vectors, held in memory."""

    inputs: np.ndarray  # (N, n, 3, H, W)
    labels: np.ndarray  # (N, L)

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.labels) or len(self.inputs) == 0:
            raise ShapeError(f"Dataset has {len(self.inputs)} inputs and {len(self.labels)} label rows")

    def __len__(self) -> int:
        return len(self.inputs)


class ShuffledBatches:
    """
    Batch `s` is a pure function of (dataset, batch_size, seed, s).

    Indices come from concatenated per-epoch permutations, each drawn from a
    generator seeded by (seed, epoch).
    """

    def __init__(self, dataset: ArrayDataset, batch_size: int, seed: int) -> None:
        if batch_size < 1:
            raise ShapeError(f"batch_size must be ≥ 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self._perms: dict[int, np.ndarray] = {}

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms[epoch] = np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))
        return self._perms[epoch]

    def indices(self, step: int) -> np.ndarray:
        n = len(self.dataset)
        positions = np.arange(step * self.batch_size, (step + 1) * self.batch_size)
        return np.array([self._permutation(int(p // n))[p % n] for p in positions])

    def batch(self, step: int) -> TrainBatch:
        idx = self.indices(step)
        return TrainBatch(inputs=self.dataset.inputs[idx], labels=self.dataset.labels[idx], indices=idx)


def iter_batches(source: ShuffledBatches, steps: int, prefetch_depth: int = 0) -> Iterator[TrainBatch]:
    """Yield batches 0..steps-1 in order; with prefetch_depth > 0 they are assembled ahead on a worker."""
    if prefetch_depth == 0:
        for step in range(steps):
            yield source.batch(step)
        return
    # Fill the permutation cache before the worker starts reading it.
    for epoch in range((steps * source.batch_size) // len(source.dataset) + 1):
        source._permutation(epoch)
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="batch") as pool:
        pending: deque[Future[TrainBatch]] = deque()
        next_step = 0
        for _ in range(steps):
            while next_step < steps and len(pending) <= prefetch_depth:
                pending.append(pool.submit(source.batch, next_step))
                next_step += 1
            yield pending.popleft().result()
