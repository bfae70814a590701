"""
Unit tests for experiment orchestration, artifacts and reporting.
Runs tiny synthetic experiments in temporary directories.
"""

import os
import tempfile
import unittest
from unittest.mock import patch
import numpy as np
import pandas as pd
from pydantic import ValidationError

import sys
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

import experiment
from artifact_writer import (ABLATION_FILE, LEADERBOARD_FILE, MANIFEST_FILE, METRICS_CSV_FILE, PARAMS_FILE,
                             TRACE_FILE, ArtifactWriter, load_model, read_manifest, read_metrics, read_table,
                             read_trace)
from experiment import CreditRatingExperiment, ExperimentSpec, load_spec, parse_subsets, report, spec_from_mapping
from synthetic import SyntheticSpec

TINY = {
    'synthetic_n': "80", 'synthetic_seed': "1", 'filters': "4", 'units': "4", 'attention_dim': "4",
    'embedding_dim': "4", 'encoder_ff_dim': "8", 'cross_attention_dim': "4", 'head_hidden': "6",
    'max_text_length': "12", 'epochs': "2", 'batch_size': "16", 'learning_rate': "0.01",
    'resamples': "0", 'vocab_max_size': "60", 'seed': "3",
}


def tiny_spec(out: str, **overrides) -> ExperimentSpec:
    return spec_from_mapping({**TINY, 'out': out, **overrides})


class TestSpecLoading(unittest.TestCase):
    """Test cases for experiment specs."""

    def test_flat_keys_route_to_sections(self):
        """Test routing of fusion, train, evaluation and synthetic keys."""
        spec = spec_from_mapping({**TINY, 'group': "2", 'base': "att", 'channels': "text, bond",
                                  'slices': "agency,period", 'split': "oou"})
        self.assertEqual((spec.fusion.group, spec.fusion.base), (2, "att"))
        self.assertEqual(spec.fusion.channels, ["bond", "text"])
        self.assertEqual(spec.train.epochs, 2)
        self.assertEqual(spec.evaluation.slices, ["agency", "period"])
        self.assertEqual(spec.synthetic.n, 80)
        self.assertEqual(spec.split, "oou")

    def test_preset_sits_beneath_explicit_values(self):
        """Test preset precedence."""
        spec = spec_from_mapping({'preset': "desk", 'synthetic_n': "50", 'filters': "8"})
        self.assertEqual(spec.fusion.filters, 8)
        self.assertEqual(spec.fusion.units, 16)
        self.assertEqual(spec.train.epochs, 20)

    def test_unknown_key(self):
        """Test that an unknown setting raises."""
        with self.assertRaises(ValueError):
            spec_from_mapping({**TINY, 'optimizer': "sgd"})

    def test_exactly_one_data_source(self):
        """Test data source validation."""
        with self.assertRaises(ValidationError):
            ExperimentSpec()
        with self.assertRaises(ValidationError):
            ExperimentSpec(data_dir="data", synthetic=SyntheticSpec(n=10))

    def test_ablation_subsets(self):
        """Test subset parsing and validation."""
        self.assertEqual(parse_subsets("text;market;bond+ratios"), [["text"], ["market"], ["bond", "ratios"]])
        spec = spec_from_mapping({**TINY, 'ablation': "text;numeric"})
        self.assertEqual(spec.ablation, [["text"], ["bond", "ratios", "market", "covariate"]])
        with self.assertRaises(ValueError):
            spec_from_mapping({**TINY, 'ablation': "text;news"})

    def test_config_file_and_overrides(self):
        """Test KEY=value files with command-line values on top."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "experiment.env")
            with open(path, 'w', encoding='utf-8') as f:
                f.write("SYNTHETIC_N=60\nEPOCHS=3\nGROUP=4\n")
            spec = load_spec(path, {'epochs': "5", 'base': None})
        self.assertEqual(spec.synthetic.n, 60)
        self.assertEqual(spec.train.epochs, 5)
        self.assertEqual(spec.fusion.group, 4)

    def test_missing_config_file(self):
        """Test a config path that does not exist."""
        with self.assertRaises(FileNotFoundError):
            load_spec("/nonexistent/experiment.env")

    def test_seeds_derive_from_run_seed(self):
        """Test that component seeds follow the run seed."""
        first = tiny_spec("out").seeded()
        again = tiny_spec("out").seeded()
        other = tiny_spec("out", seed="4").seeded()
        self.assertEqual(first.fusion.init_seed, again.fusion.init_seed)
        self.assertNotEqual(first.fusion.init_seed, other.fusion.init_seed)
        self.assertNotEqual(first.train.seed, first.evaluation.seed)


class TestManifestHash(unittest.TestCase):
    """Test cases for the spec hash recorded in the manifest."""

    def _manifest_hash(self, spec: ExperimentSpec) -> str:
        with tempfile.TemporaryDirectory() as tmp:
            writer = ArtifactWriter(os.path.join(tmp, "run"))
            self.assertTrue(writer.prepare())
            self.assertTrue(writer.write_manifest(spec.model_dump(mode='json'), spec.seed))
            return read_manifest(writer.run_dir)['spec_hash']

    def test_hash_follows_spec_fields(self):
        """Test that equal specs share a hash and any single field change alters it."""
        base = self._manifest_hash(tiny_spec("out"))
        self.assertEqual(self._manifest_hash(tiny_spec("out")), base)
        for key, value in (('learning_rate', "0.02"), ('filters', "5"), ('seed', "4"),
                           ('resamples', "100"), ('synthetic_seed', "2")):
            self.assertNotEqual(self._manifest_hash(tiny_spec("out", **{key: value})), base, key)
        self.assertNotEqual(self._manifest_hash(tiny_spec("elsewhere")), base)


class TestRunExperiment(unittest.TestCase):
    """Test cases for single runs and their artifacts."""

    def setUp(self):
        """Create an output directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, "run")

    def tearDown(self):
        """Remove the output directory."""
        self.tmp.cleanup()

    def test_run_writes_artifacts(self):
        """Test a complete small run."""
        spec = tiny_spec(self.out, slices="agency")
        self.assertTrue(CreditRatingExperiment(spec).run_experiment())

        manifest = read_manifest(self.out)
        for name in (MANIFEST_FILE, PARAMS_FILE, TRACE_FILE, METRICS_CSV_FILE, "metrics.txt",
                     "ngrams.csv", "word_counts.csv"):
            self.assertTrue(os.path.isfile(os.path.join(self.out, name)), name)
        self.assertEqual(manifest['seed'], 3)
        self.assertEqual(len(manifest['spec_hash']), 64)
        self.assertEqual(manifest['split_sizes'], {'train': 52, 'validation': 12, 'test': 16})

        model, vocabulary, scaler = load_model(self.out)
        self.assertEqual(model.parameter_count(), manifest['parameters'])
        self.assertEqual(len(vocabulary), model.config.vocab_size)
        self.assertIn('ratios', scaler.medians)

        metrics = read_metrics(self.out)
        self.assertEqual(metrics.support, 16)
        self.assertIn("agency=MR", metrics.slices)
        self.assertEqual(len(read_trace(self.out)), 2)

    def test_runs_are_reproducible(self):
        """Test that the same seed reproduces traces and metrics byte for byte."""
        second = os.path.join(self.tmp.name, "again")
        self.assertTrue(experiment.run_experiment(tiny_spec(self.out, analytics="false")))
        self.assertTrue(experiment.run_experiment(tiny_spec(second, analytics="false")))
        for name in (TRACE_FILE, METRICS_CSV_FILE):
            with open(os.path.join(self.out, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
                self.assertEqual(a.read(), b.read(), name)

    def test_run_with_ablation(self):
        """Test the ablation table of a run."""
        self.assertTrue(CreditRatingExperiment(tiny_spec(self.out, ablation="text;bond+ratios",
                                                         analytics="false")).run_ablation())
        table = read_table(self.out, ABLATION_FILE)
        self.assertEqual(list(table['channels'].unique()), ["text", "bond+ratios"])
        self.assertIn("Ablation", report(self.out))

    def test_failed_load_returns_false(self):
        """Test that a missing data directory fails the run without raising."""
        spec = spec_from_mapping({**{k: v for k, v in TINY.items() if not k.startswith("synthetic_")},
                                  'data_dir': os.path.join(self.tmp.name, "missing"), 'out': self.out})
        self.assertFalse(CreditRatingExperiment(spec).run_experiment())

    def test_report(self):
        """Test the text report of a run directory."""
        self.assertTrue(CreditRatingExperiment(tiny_spec(self.out)).run_experiment())
        text = report(self.out)
        self.assertIn("Weighted AUC", text)
        self.assertIn("Mean words per class", text)
        self.assertIn("Best epoch", text)
        with self.assertRaises(FileNotFoundError):
            report(os.path.join(self.tmp.name, "nothing"))


class TestSweep(unittest.TestCase):
    """Test cases for the architecture sweep."""

    def test_leaderboard_ranks_and_failures(self):
        """Test ranking, failure rows and continuation after a failure."""
        real = experiment.fit_and_evaluate

        def flaky(config, *args, **kwargs):
            if config.base == "att":
                raise RuntimeError("simulated failure")
            return real(config, *args, **kwargs)

        with tempfile.TemporaryDirectory() as tmp, \
                patch('experiment.GROUPS', (1, 3)), patch('experiment.BASES', ("cnn", "att")), \
                patch('experiment.fit_and_evaluate', side_effect=flaky):
            self.assertTrue(experiment.run_sweep(tiny_spec(tmp, epochs="1", analytics="false")))
            leaderboard = read_table(tmp, LEADERBOARD_FILE)
            manifest = read_manifest(tmp)

        self.assertEqual(list(leaderboard['rank']), [1, 2, 3, 4])
        self.assertEqual(list(leaderboard['status']), ["ok", "ok", "failed", "failed"])
        ok = leaderboard[leaderboard['status'] == "ok"]
        self.assertTrue(ok['weighted_auc'].is_monotonic_decreasing)
        self.assertTrue(pd.isna(leaderboard.loc[3, 'weighted_auc']))
        self.assertIn("simulated failure", leaderboard.loc[3, 'error'])
        self.assertEqual(manifest['failed_rows'], 2)
        self.assertTrue(np.all(leaderboard['channels'] == "bond+ratios+market+covariate+text"))


if __name__ == '__main__':
    unittest.main()
