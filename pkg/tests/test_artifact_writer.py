"""
Unit tests for artifact persistence.
"""

import json
import tempfile
import unittest
import numpy as np
import pandas as pd

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from artifact_writer import (MANIFEST_FILE, PARAMS_FILE, ArtifactWriter, load_model, read_manifest, read_table,
                             read_trace)
from evaluation import prepare_splits
from fusion_models import build_model
from gradcheck import small_model_config
from splits import split_random
from synthetic import SyntheticSpec, generate_synthetic
from trainer import TrainTrace



class TestArtifactWriter(unittest.TestCase):
    """Test cases for writing and reading a run directory."""

    @classmethod
    def setUpClass(cls):
        """Prepare a small model with its preprocessing."""
        dataset = generate_synthetic(SyntheticSpec(n=60, seed=2))
        cls.prepared = prepare_splits(dataset, split_random(dataset, seed=0), max_text_length=12, vocab_max_size=40)
        cls.model = build_model(small_model_config(4, "att", vocab_size=len(cls.prepared.vocabulary), init_seed=9))

    def setUp(self):
        """Create an output directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.writer = ArtifactWriter(os.path.join(self.tmp.name, "run"))
        self.assertTrue(self.writer.prepare())

    def tearDown(self):
        """Remove the output directory."""
        self.tmp.cleanup()

    def test_model_round_trip(self):
        """Test that a reloaded model reproduces the logits."""
        self.assertTrue(self.writer.write_model(self.model, self.prepared.vocabulary, self.prepared.scaler))
        model, vocabulary, scaler = load_model(self.writer.run_dir)

        batch = self.prepared.test.batch()
        np.testing.assert_array_equal(model.forward(batch).data, self.model.forward(batch).data)
        self.assertEqual(vocabulary.to_dict(), self.prepared.vocabulary.to_dict())
        np.testing.assert_array_equal(scaler.medians['bond'], self.prepared.scaler.medians['bond'])
        self.assertEqual(model.config, self.model.config)

    def test_unknown_archive_version(self):
        """Test that a foreign archive version is rejected."""
        self.assertTrue(self.writer.write_model(self.model, self.prepared.vocabulary, self.prepared.scaler))
        path = self.writer.path(PARAMS_FILE)
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
        arrays['meta.format_version'] = np.array(99)
        with open(path, 'wb') as f:
            np.savez(f, **arrays)
        with self.assertRaises(ValueError):
            load_model(self.writer.run_dir)

    def test_parameter_mismatch(self):
        """Test an archive whose parameters do not fit the stored architecture."""
        self.assertTrue(self.writer.write_model(self.model, self.prepared.vocabulary, self.prepared.scaler))
        path = self.writer.path(PARAMS_FILE)
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
        first = next(key for key in arrays if key.startswith("param."))
        del arrays[first]
        with open(path, 'wb') as f:
            np.savez(f, **arrays)
        with self.assertRaises(ValueError):
            load_model(self.writer.run_dir)

    def test_manifest_and_verify(self):
        """Test the manifest contents and read-back verification."""
        self.assertTrue(self.writer.write_trace(TrainTrace(train_loss=[1.0], val_loss=[1.1], val_auc=[0.6],
                                                           best_epoch=1)))
        self.assertTrue(self.writer.write_frame("table.csv", pd.DataFrame({'a': [1, 2], 'b': ["x", "NA"]})))
        self.assertTrue(self.writer.write_manifest({'seed': 5}, 5, {'best_epoch': 1}))
        self.assertTrue(self.writer.verify())

        manifest = read_manifest(self.writer.run_dir)
        self.assertEqual(manifest['files'], ["table.csv", "trace.csv"])
        self.assertEqual(manifest['best_epoch'], 1)
        self.assertEqual(read_trace(self.writer.run_dir).best_epoch, 1)
        self.assertEqual(list(read_table(self.writer.run_dir, "table.csv")['b']), ["x", "NA"])

        with open(self.writer.path(MANIFEST_FILE), 'r', encoding='utf-8') as f:
            self.assertEqual(json.load(f)['spec_hash'], manifest['spec_hash'])

    def test_verify_reports_broken_files(self):
        """Test that an unreadable artifact fails verification."""
        self.assertTrue(self.writer.write_trace(TrainTrace(train_loss=[1.0], val_loss=[1.1], val_auc=[0.6],
                                                           best_epoch=1)))
        os.remove(self.writer.path("trace.csv"))
        with self.assertLogs("credit_fusion.artifact_writer", level="ERROR"):
            self.assertFalse(self.writer.verify())


if __name__ == '__main__':
    unittest.main()
