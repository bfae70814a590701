"""
Unit tests for evaluation reports, slicing and ablation.
"""

import unittest
import numpy as np
import pandas as pd
from pydantic import ValidationError

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from evaluation import (EvaluationConfig, MetricsReport, ablation_run, evaluate, fit_and_evaluate, format_confusion,
                        lag_bucket, period_bucket, prepare_splits, resolve_channels, slice_metrics)
from gradcheck import small_model_config
from splits import split_random
from synthetic import SyntheticSpec, generate_synthetic
from trainer import TrainConfig


def _predictions(seed: int, n: int = 90, classes: int = 8):
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes) + 1
    logits = rng.normal(size=(n, classes))
    logits[np.arange(n), labels - 1] += 1.5
    probabilities = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    metadata = pd.DataFrame({
        'agency': rng.choice(["MR", "SPR", "FR"], size=n),
        'lag_months': rng.integers(2, 15, size=n),
        'time_index': [f"20{rng.integers(15, 23)}-0{rng.integers(1, 10)}" for _ in range(n)],
    })
    return probabilities, labels, metadata


class TestBuckets(unittest.TestCase):
    """Test cases for slice buckets."""

    def test_lag_buckets(self):
        """Test bucket boundaries."""
        self.assertEqual([lag_bucket(v) for v in (2, 4, 5, 9, 10, 14)],
                         ["short", "short", "medium", "medium", "long", "long"])

    def test_period_bucket(self):
        """Test the period cut is the first month of 'after'."""
        self.assertEqual(period_bucket("2020-02", "2020-03"), "before")
        self.assertEqual(period_bucket("2020-03", "2020-03"), "after")

    def test_config_validation(self):
        """Test resample and period cut validation."""
        EvaluationConfig(resamples=0)
        with self.assertRaises(ValidationError):
            EvaluationConfig(resamples=50)
        with self.assertRaises(ValidationError):
            EvaluationConfig(period_cut="March 2020")
        with self.assertRaises(ValidationError):
            EvaluationConfig(slices=["sector"])


class TestReports(unittest.TestCase):
    """Test cases for evaluate and slice_metrics."""

    def setUp(self):
        """Set up random predictions with metadata."""
        self.probabilities, self.labels, self.metadata = _predictions(0)

    def test_no_intervals_when_resamples_zero(self):
        """Test resamples=0."""
        report = evaluate(self.probabilities, self.labels, EvaluationConfig(resamples=0))
        self.assertEqual(report.ci, {})
        self.assertEqual(report.support, 90)
        self.assertGreater(report.weighted_auc, 0.5)

    def test_intervals(self):
        """Test one interval per headline metric."""
        report = evaluate(self.probabilities, self.labels, EvaluationConfig(resamples=200))
        self.assertEqual(set(report.ci), {'weighted_auc', 'f1', 'accuracy'})
        for low, high in report.ci.values():
            self.assertLessEqual(low, high)

    def test_empty_input(self):
        """Test the empty report."""
        report = evaluate(np.zeros((0, 8)), np.zeros(0), EvaluationConfig(resamples=0))
        self.assertTrue(report.empty)
        self.assertTrue(np.isnan(report.weighted_auc))

    def test_slices_partition_records(self):
        """Test that slice supports and confusion matrices add up to the overall report."""
        config = EvaluationConfig(resamples=0, slices=["agency", "lag_bucket", "period"])
        report = slice_metrics(self.probabilities, self.labels, self.metadata, config.slices, config)
        for key in config.slices:
            parts = [r for name, r in report.slices.items() if name.startswith(f"{key}=")]
            self.assertEqual(sum(r.support for r in parts), report.support, key)
            np.testing.assert_array_equal(sum(r.confusion for r in parts), report.confusion)
        self.assertIn("agency=SPR", report.slices)
        self.assertIn("lag_bucket=long", report.slices)

    def test_empty_slice_is_marked(self):
        """Test a slice value with no records."""
        self.metadata['agency'] = "MR"
        report = slice_metrics(self.probabilities, self.labels, self.metadata, ["agency"],
                               EvaluationConfig(resamples=0))
        self.assertTrue(report.slices["agency=FR"].empty)
        self.assertFalse(report.slices["agency=MR"].empty)
        self.assertIn("empty slice", report.to_text())

    def test_metadata_length_mismatch(self):
        """Test misaligned metadata."""
        with self.assertRaises(ValueError):
            slice_metrics(self.probabilities, self.labels, self.metadata.iloc[:5], ["agency"])

    def test_frame_round_trip(self):
        """Test that the flat table rebuilds the report."""
        config = EvaluationConfig(resamples=100, slices=["agency"])
        report = slice_metrics(self.probabilities, self.labels, self.metadata, config.slices, config)
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), ['slice', 'metric', 'value', 'ci_low', 'ci_high'])
        self.assertEqual(frame.loc[0, 'slice'], "all")

        restored = MetricsReport.from_frame(frame)
        self.assertAlmostEqual(restored.weighted_auc, report.weighted_auc)
        np.testing.assert_array_equal(restored.confusion, report.confusion)
        self.assertEqual(set(restored.slices), set(report.slices))
        self.assertEqual(restored.ci['f1'], report.ci['f1'])

    def test_text_rendering(self):
        """Test the text report and confusion formatting."""
        text = evaluate(self.probabilities, self.labels, EvaluationConfig(resamples=100)).to_text()
        self.assertIn("Weighted AUC", text)
        self.assertIn("(CI ", text)
        lines = format_confusion(np.array([[1, 1], [0, 2]])).splitlines()
        self.assertEqual(lines[1].split()[1:], ["50.0", "50.0"])
        self.assertEqual(lines[2].split()[1:], ["0.0", "100.0"])


class TestChannels(unittest.TestCase):
    """Test cases for channel subsets."""

    def test_resolve_channels(self):
        """Test group expansion and canonical order."""
        self.assertEqual(resolve_channels(["numeric"]), ["bond", "ratios", "market", "covariate"])
        self.assertEqual(resolve_channels(["text", " bond"]), ["bond", "text"])
        self.assertEqual(len(resolve_channels(["all"])), 5)
        with self.assertRaises(ValueError):
            resolve_channels([])
        with self.assertRaises(ValueError):
            resolve_channels(["sentiment"])


class TestPipeline(unittest.TestCase):
    """Test cases for prepare_splits, fit_and_evaluate and ablation_run."""

    @classmethod
    def setUpClass(cls):
        """Generate data with a token that only test records contain."""
        cls.dataset = generate_synthetic(SyntheticSpec(n=80, seed=8))
        cls.split = split_random(cls.dataset, seed=1)
        for i in cls.split.test:
            cls.dataset.texts[i] = cls.dataset.texts[i] + " heldouttoken"
        cls.prepared = prepare_splits(cls.dataset, cls.split, max_text_length=12, vocab_max_size=80)

    def test_preprocessing_is_fit_on_train_only(self):
        """Test the vocabulary and scaler see only training records."""
        self.assertNotIn("heldouttoken", self.prepared.vocabulary)
        train = self.dataset.subset(self.split.train)
        np.testing.assert_allclose(self.prepared.scaler.means['market'], train.market.mean(axis=0))
        self.assertEqual(self.prepared.max_text_length, 12)
        self.assertEqual(len(self.prepared.test), len(self.split.test))

    def test_fit_and_evaluate(self):
        """Test one small end-to-end fit."""
        result = fit_and_evaluate(small_model_config(1, "gru"), TrainConfig(epochs=1, batch_size=16),
                                  self.prepared, EvaluationConfig(resamples=0, slices=["agency"]))
        self.assertEqual(result.config.vocab_size, len(self.prepared.vocabulary))
        self.assertEqual(result.probabilities.shape, (len(self.prepared.test), 8))
        self.assertEqual(len(result.trace), 1)
        self.assertEqual(result.report.support, len(self.prepared.test))
        self.assertIn("agency=MR", result.report.slices)

    def test_ablation_builds_only_selected_streams(self):
        """Test a text-only ablation."""
        report = ablation_run(small_model_config(2, "cnn"), self.prepared, ["text"],
                              TrainConfig(epochs=1, batch_size=16), EvaluationConfig(resamples=0))
        self.assertEqual(report.support, len(self.prepared.test))
        with self.assertRaises(ValueError):
            ablation_run(small_model_config(2, "cnn"), self.prepared, [], TrainConfig(epochs=1))


if __name__ == '__main__':
    unittest.main()
