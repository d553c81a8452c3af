"""Tests for the loss, schedule, optimizer, batch source and training loop."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from ctscroll.errors import ConfigError, NumericError, ShapeError
from ctscroll.model.checkpoint import load_checkpoint
from ctscroll.model.network import CTScroll
from ctscroll.nn.tensor import Parameter, no_grad
from ctscroll.training.data import ArrayDataset, ShuffledBatches, iter_batches
from ctscroll.training.loop import LOSS_COLUMNS, train_loop
from ctscroll.training.loss import bce_with_logits
from ctscroll.training.optim import AdamWConfig, OptimizerState, adamw_step
from ctscroll.training.schedule import ScheduleConfig, lr_at
from tests.fixtures.phantoms import quick_train_config, random_dataset, random_stacks


class TestLoss:

    def test_zero_logit_is_log2(self):
        loss = bce_with_logits(Parameter(np.zeros((2, 3))), np.array([[0, 1, 0], [1, 1, 0]]))
        assert loss.item() == pytest.approx(math.log(2.0))

    def test_confident_correct_logit(self):
        loss = bce_with_logits(Parameter([[20.0]]), np.array([[1]]))
        assert loss.item() == pytest.approx(2.06e-9, rel=1e-2)

    def test_large_negative_logit_is_finite(self):
        loss = bce_with_logits(Parameter([[-800.0]]), np.array([[1]]))
        assert loss.item() == pytest.approx(800.0)

    def test_gradient_is_sigmoid_minus_label_over_count(self):
        z = Parameter(np.array([[0.0, 2.0], [-1.0, 0.5]]))
        y = np.array([[1, 0], [0, 1]])
        bce_with_logits(z, y).backward()
        expected = (1.0 / (1.0 + np.exp(-z.data)) - y) / 4.0
        np.testing.assert_allclose(z.grad, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_with_logits(Parameter(np.zeros((2, 3))), np.zeros((3, 2)))


class TestSchedule:

    @pytest.mark.parametrize("step,expected", [(0, 0.0), (20_000, 1e-4), (60_000, 5e-5), (100_000, 0.0)])
    def test_full_scale_points(self, step, expected):
        assert lr_at(step, ScheduleConfig.full_scale()) == pytest.approx(expected, abs=1e-15)

    def test_warmup_is_linear(self):
        sched = ScheduleConfig(warmup_steps=10, total_steps=20, max_lr=1.0)
        assert [lr_at(s, sched) for s in (0, 5, 10)] == pytest.approx([0.0, 0.5, 1.0])

    def test_decay_is_monotone(self):
        sched = ScheduleConfig()
        values = [lr_at(s, sched) for s in range(sched.warmup_steps, sched.total_steps + 1, 50)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_past_the_end(self):
        assert lr_at(3000, ScheduleConfig()) == 0.0

    def test_negative_step(self):
        with pytest.raises(ConfigError):
            lr_at(-1, ScheduleConfig())

    def test_warmup_must_precede_end(self):
        with pytest.raises(ValidationError):
            ScheduleConfig(warmup_steps=100, total_steps=100)


class TestAdamW:

    def _single(self, weight_decay: float) -> tuple[dict[str, Parameter], OptimizerState]:
        params = {"p": Parameter(np.array([1.0]))}
        return params, OptimizerState.init(params, AdamWConfig(weight_decay=weight_decay))

    def test_first_step_moves_by_lr(self):
        params, state = self._single(0.0)
        adamw_step(params, {"p": np.array([1.0])}, state, lr=0.1)
        assert params["p"].data[0] == pytest.approx(0.9, abs=1e-6)
        assert state.t == 1

    def test_decoupled_weight_decay(self):
        params, state = self._single(0.5)
        adamw_step(params, {"p": np.array([0.0])}, state, lr=0.1)
        assert params["p"].data[0] == pytest.approx(1.0 - 0.1 * 0.5)

    def test_missing_gradient_counts_as_zero(self):
        params, state = self._single(0.0)
        adamw_step(params, {"p": None}, state, lr=0.1)
        assert params["p"].data[0] == 1.0

    def test_non_finite_gradient_leaves_parameters(self):
        params, state = self._single(0.0)
        with pytest.raises(NumericError, match="Non-finite"):
            adamw_step(params, {"p": np.array([np.nan])}, state, lr=0.1)
        assert params["p"].data[0] == 1.0
        assert state.t == 0

    def test_gradient_shape_mismatch(self):
        params, state = self._single(0.0)
        with pytest.raises(ShapeError):
            adamw_step(params, {"p": np.zeros(2)}, state, lr=0.1)

    def test_zero_lr_leaves_parameters_bit_identical(self):
        rng = np.random.default_rng(6)
        params = {"w": Parameter(rng.normal(size=(3, 4))), "b": Parameter(np.array([-0.0, 2.5]))}
        before = {k: p.data.copy() for k, p in params.items()}
        state = OptimizerState.init(params, AdamWConfig(weight_decay=0.05))
        for _ in range(3):
            grads = {k: rng.normal(size=p.shape) for k, p in params.items()}
            adamw_step(params, grads, state, lr=0.0)
        for k, p in params.items():
            assert p.data.tobytes() == before[k].tobytes()
        assert state.t == 3


class TestBatches:

    def _dataset(self, n: int = 5) -> ArrayDataset:
        inputs = np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1, 1)
        return ArrayDataset(inputs=inputs, labels=np.zeros((n, 2), dtype=np.int64))

    def test_batches_are_pure_functions_of_step(self):
        a = ShuffledBatches(self._dataset(), 2, seed=3)
        b = ShuffledBatches(self._dataset(), 2, seed=3)
        for step in (4, 0, 2):
            np.testing.assert_array_equal(a.indices(step), b.indices(step))

    def test_each_epoch_is_a_permutation(self):
        source = ShuffledBatches(self._dataset(6), 3, seed=1)
        epoch = np.concatenate([source.indices(0), source.indices(1)])
        assert sorted(epoch.tolist()) == list(range(6))

    def test_seed_changes_order(self):
        orders = {tuple(ShuffledBatches(self._dataset(8), 8, seed=s).indices(0)) for s in range(4)}
        assert len(orders) > 1

    def test_prefetch_preserves_order(self):
        source = ShuffledBatches(self._dataset(), 2, seed=0)
        sync = [b.indices.tolist() for b in iter_batches(source, 7, prefetch_depth=0)]
        ahead = [b.indices.tolist() for b in iter_batches(source, 7, prefetch_depth=3)]
        assert sync == ahead

    def test_batch_inputs_follow_indices(self):
        batch = ShuffledBatches(self._dataset(), 3, seed=2).batch(1)
        assert batch.inputs.reshape(-1).tolist() == batch.indices.astype(np.float32).tolist()

    def test_invalid_batch_size(self):
        with pytest.raises(ShapeError):
            ShuffledBatches(self._dataset(), 0, seed=0)

    def test_empty_dataset(self):
        with pytest.raises(ShapeError):
            ArrayDataset(inputs=np.zeros((0, 1)), labels=np.zeros((0, 1)))


class TestTrainLoop:

    def test_zero_steps_keeps_initialisation(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg)
        result = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), quick_train_config(0), tmp_path)
        loaded, step = load_checkpoint(result.checkpoint)
        assert step == 0 and result.steps == 0
        reference = CTScroll(micro_cfg, seed=0)
        for name, value in reference.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[name], value)

    def test_outputs_written(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg)
        cfg = quick_train_config(4, checkpoint_every=2)
        result = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), cfg, tmp_path)
        assert (tmp_path / "ckpt_2.json").exists() and (tmp_path / "ckpt_4.json").exists()
        assert result.checkpoint == tmp_path / "final.json"
        trace = pd.read_csv(result.loss_csv)
        assert list(trace.columns) == LOSS_COLUMNS
        assert trace["step"].tolist() == [1, 2, 3, 4]
        assert np.all(np.isfinite(trace["loss"]))

    def test_same_seed_same_run(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg)
        cfg = quick_train_config(3)
        first = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), cfg, tmp_path / "a")
        second = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), cfg, tmp_path / "b")
        assert first.losses == second.losses
        for name, value in first.model.state_dict().items():
            np.testing.assert_array_equal(second.model.state_dict()[name], value)

    def test_training_changes_parameters(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg)
        result = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), quick_train_config(2), tmp_path)
        initial = CTScroll(micro_cfg, seed=0)
        assert not np.array_equal(result.model.head.out.weight.data, initial.head.out.weight.data)

    def test_non_finite_loss_aborts_with_last_good(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg)
        dataset.inputs[:] = np.nan
        with pytest.raises(NumericError, match="last good"):
            train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), quick_train_config(2), tmp_path)
        _, step = load_checkpoint(tmp_path / "last_good.json")
        assert step == 0


def separable_dataset(cfg, n: int = 8) -> ArrayDataset:
    """Every label equals the sign of a constant intensity offset."""
    y = np.arange(n) % 2
    inputs = 0.1 * random_stacks(cfg, n, seed=2) + (2.0 * y - 1.0)[:, None, None, None, None]
    labels = np.repeat(y[:, None], cfg.n_labels, axis=1).astype(np.int64)
    return ArrayDataset(inputs=inputs.astype(np.float32), labels=labels)


def dataset_loss(model: CTScroll, dataset: ArrayDataset) -> float:
    with no_grad():
        return bce_with_logits(model(dataset.inputs), dataset.labels).item()


class TestToyTask:

    def test_loss_drops_within_200_steps(self, micro_cfg, tmp_path):
        dataset = separable_dataset(micro_cfg)
        cfg = quick_train_config(200, batch_size=8,
                                 schedule=ScheduleConfig(warmup_steps=20, total_steps=200, max_lr=3e-3))
        result = train_loop(micro_cfg, ShuffledBatches(dataset, 8, 0), cfg, tmp_path)
        initial = dataset_loss(CTScroll(micro_cfg, seed=0), dataset)
        assert dataset_loss(result.model, dataset) < 0.9 * initial

    @pytest.mark.slow
    def test_300_step_runs_are_bit_identical(self, micro_cfg, tmp_path):
        dataset = random_dataset(micro_cfg, n=8)
        cfg = quick_train_config(300, schedule=ScheduleConfig(warmup_steps=30, total_steps=300))
        first = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), cfg, tmp_path / "a")
        second = train_loop(micro_cfg, ShuffledBatches(dataset, 2, 0), cfg, tmp_path / "b")
        assert first.losses == second.losses
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
        for name, value in first.model.state_dict().items():
            assert second.model.state_dict()[name].tobytes() == value.tobytes()
