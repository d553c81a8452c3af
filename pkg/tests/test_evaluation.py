"""Tests for metrics, threshold selection, significance, reports and prediction files."""

from __future__ import annotations

import json

import numpy as np
import pytest

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.evaluation.metrics import auroc, confusion_metrics
from ctscroll.evaluation.predictions import predict, read_predictions, write_predictions
from ctscroll.evaluation.report import PredictionSet, evaluate
from ctscroll.evaluation.significance import paired_t_test
from ctscroll.evaluation.thresholds import (
    DEFAULT_THRESHOLD,
    ThresholdChoice,
    candidate_thresholds,
    read_thresholds,
    select_threshold,
    select_thresholds,
    write_thresholds,
)
from ctscroll.model.network import CTScroll
from tests.fixtures.phantoms import random_dataset


def pairwise_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(N²) reference: P(score_pos > score_neg) + ½ P(tie)."""
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


class TestAuroc:

    def test_matches_pairwise_count(self, rng):
        scores = rng.random(200)
        labels = rng.integers(0, 2, 200)
        assert auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)

    def test_ties_count_half(self, rng):
        scores = np.round(rng.random(300), 1)
        labels = rng.integers(0, 2, 300)
        assert auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)

    def test_perfect_and_reversed(self):
        labels = np.array([0, 0, 1, 1])
        assert auroc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert auroc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_single_class_is_undefined(self):
        assert np.isnan(auroc(np.array([0.2, 0.7]), np.array([1, 1])))

    def test_random_scores_near_chance(self):
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 2, size=(2000, 4))
        preds = PredictionSet(scores=rng.random((2000, 4)), labels=labels, label_names=list("abcd"))
        report = evaluate(preds, [0.5] * 4)
        assert abs(report.macro["auroc"] - 0.5) < 0.03

    def test_non_binary_labels(self):
        with pytest.raises(ShapeError, match="binary"):
            auroc(np.array([0.1, 0.2]), np.array([0, 2]))


class TestConfusion:

    def test_threshold_is_inclusive(self):
        cm = confusion_metrics(np.array([0.5, 0.4, 0.9, 0.1]), np.array([1, 1, 0, 0]), 0.5)
        assert (cm.tp, cm.fn, cm.fp, cm.tn) == (1, 1, 1, 1)
        assert cm.f1 == pytest.approx(0.5)
        assert cm.accuracy == pytest.approx(0.5)

    def test_no_predicted_positives(self):
        cm = confusion_metrics(np.array([0.1, 0.2]), np.array([1, 0]), 0.9)
        assert cm.precision == 0.0 and cm.recall == 0.0 and cm.f1 == 0.0


class TestThresholds:

    def test_two_point_example(self):
        choice = select_threshold(np.array([0.1, 0.9]), np.array([0, 1]))
        assert choice.threshold == 0.5
        assert choice.f1 == 1.0

    def test_candidates(self):
        assert candidate_thresholds(np.array([0.2, 0.6, 0.2, 0.8])).tolist() == pytest.approx([0.0, 0.4, 0.7, 1.0])
        assert candidate_thresholds(np.array([0.5])).tolist() == [0.0, 1.0]

    def test_matches_exhaustive_scan(self, rng):
        scores = np.round(rng.random(60), 2)
        labels = (rng.random(60) < 0.4).astype(int)
        choice = select_threshold(scores, labels)
        scan = [(confusion_metrics(scores, labels, t).f1, t) for t in candidate_thresholds(scores)]
        best = max(f1 for f1, _ in scan)
        assert choice.f1 == pytest.approx(best)
        assert choice.threshold == min(t for f1, t in scan if f1 == best)

    def test_no_positives_defaults(self):
        choice = select_threshold(np.array([0.3, 0.8]), np.array([0, 0]))
        assert choice.threshold == DEFAULT_THRESHOLD and choice.defaulted

    def test_column_wise(self):
        scores = np.array([[0.1, 0.3], [0.9, 0.2]])
        labels = np.array([[0, 0], [1, 0]])
        choices = select_thresholds(scores, labels, ["a", "b"])
        assert [c.threshold for c in choices] == [0.5, DEFAULT_THRESHOLD]
        assert [c.defaulted for c in choices] == [False, True]

    def test_threshold_file(self, tmp_path):
        path = write_thresholds([ThresholdChoice(0.25, 0.8), ThresholdChoice(0.5, 0.0, True)], ["a", "b"],
                                tmp_path / "t.json")
        doc = read_thresholds(path)
        assert doc.thresholds == [0.25, 0.5]
        assert doc.defaulted == [False, True]

    def test_unreadable_threshold_file(self, tmp_path):
        (tmp_path / "t.json").write_text("{}")
        with pytest.raises(VolumeIOError):
            read_thresholds(tmp_path / "t.json")


class TestSignificance:

    def test_known_differences(self):
        p = paired_t_test(np.array([2.0, 1.5, 2.5]), np.array([1.0, 1.0, 1.0]))
        assert p == pytest.approx(0.0742, abs=1e-4)

    def test_identical_runs(self):
        runs = np.array([0.7, 0.8, 0.75])
        assert paired_t_test(runs, runs) == 1.0

    def test_constant_nonzero_difference(self):
        assert paired_t_test(np.array([1.0, 2.0]), np.array([0.5, 1.5])) == 0.0

    def test_needs_two_paired_runs(self):
        with pytest.raises(ShapeError):
            paired_t_test(np.array([0.9]), np.array([0.8]))
        with pytest.raises(ShapeError):
            paired_t_test(np.array([0.9, 0.8]), np.array([0.8, 0.7, 0.6]))


class TestReport:

    def _preds(self) -> PredictionSet:
        scores = np.array([[0.9, 0.1], [0.9, 0.9], [0.9, 0.1], [0.1, 0.1]])
        labels = np.array([[1, 1], [1, 0], [1, 0], [0, 0]])
        return PredictionSet(scores=scores, labels=labels, label_names=["common", "rare"])

    def test_weighted_f1_follows_prevalence(self):
        report = evaluate(self._preds(), [0.5, 0.5])
        assert [m.f1 for m in report.per_label] == [1.0, 0.0]
        assert report.macro["f1"] == pytest.approx(0.5)
        assert report.weighted_f1 == pytest.approx(0.75)

    def test_undefined_auroc_left_out_of_macro(self):
        preds = PredictionSet(scores=np.array([[0.9, 0.3], [0.2, 0.6]]), labels=np.array([[1, 0], [0, 0]]),
                              label_names=["a", "b"])
        report = evaluate(preds, [0.5, 0.5])
        assert not report.per_label[1].auroc_defined
        assert report.macro["auroc"] == 1.0

    def test_json_writes_null_for_undefined(self, tmp_path):
        preds = PredictionSet(scores=np.array([[0.9], [0.2]]), labels=np.array([[0], [0]]), label_names=["a"])
        doc = json.loads(evaluate(preds, [0.5]).to_json(tmp_path / "r.json").read_text())
        assert doc["per_label"][0]["auroc"] is None
        assert doc["n_samples"] == 2

    def test_csv_has_macro_row(self, tmp_path):
        frame = evaluate(self._preds(), [0.5, 0.5]).to_frame()
        assert frame["name"].tolist() == ["common", "rare", "macro"]
        assert frame["weighted_f1"].tolist() == pytest.approx([0.75] * 3)

    def test_threshold_count_must_match(self):
        with pytest.raises(ShapeError):
            evaluate(self._preds(), [0.5])

    def test_scores_outside_unit_interval(self):
        with pytest.raises(ShapeError, match=r"\[0, 1\]"):
            PredictionSet(scores=np.array([[1.5]]), labels=np.array([[1]]), label_names=["a"])


class TestPredictions:

    def test_predict_scores_every_sample(self, micro_cfg):
        dataset = random_dataset(micro_cfg, n=3)
        preds, latency = predict(CTScroll(micro_cfg), dataset, list(micro_cfg.names), ["x", "y", "z"])
        assert preds.scores.shape == (3, 4)
        assert preds.ids == ["x", "y", "z"]
        assert latency > 0.0

    def test_csv_keeps_ids_and_scores(self, tmp_path):
        preds = PredictionSet(scores=np.array([[0.123456789012345, 0.5], [1.0 / 3.0, 0.0]]),
                              labels=np.array([[1, 0], [0, 1]]), label_names=["a", "b"], ids=["007", "b"])
        loaded = read_predictions(write_predictions(preds, tmp_path / "p.csv"), ["a", "b"])
        assert loaded.ids == ["007", "b"]
        np.testing.assert_array_equal(loaded.scores, preds.scores)
        np.testing.assert_array_equal(loaded.labels, preds.labels)

    def test_malformed_csv(self, tmp_path):
        (tmp_path / "p.csv").write_text("id,label_0\nx,1\n")
        with pytest.raises(VolumeIOError):
            read_predictions(tmp_path / "p.csv")
