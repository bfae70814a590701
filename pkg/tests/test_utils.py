"""
Unit tests for utility functions.
"""

import logging
import tempfile
import unittest
import pandas as pd

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from utils import derive_seed, make_rng, month_index, month_string, setup_logging, stable_hash, write_csv


class TestUtils(unittest.TestCase):
    """Test cases for utility functions."""

    def test_derive_seed(self):
        """Test that child seeds depend on the parent and the labels only."""
        self.assertEqual(derive_seed(42, "sweep", 3, "cnn"), derive_seed(42, "sweep", 3, "cnn"))
        self.assertNotEqual(derive_seed(42, "sweep", 3, "cnn"), derive_seed(42, "sweep", 3, "gru"))
        self.assertNotEqual(derive_seed(42, "init"), derive_seed(43, "init"))
        self.assertGreaterEqual(derive_seed(0, "x"), 0)
        self.assertLess(derive_seed(0, "x"), 2 ** 63)

    def test_make_rng(self):
        """Test seeded generators."""
        self.assertEqual(make_rng(5).random(), make_rng(5).random())
        self.assertEqual(make_rng(None).random(), make_rng(0).random())

    def test_month_arithmetic(self):
        """Test month indices and their inverse."""
        self.assertEqual(month_index("2021-01") - month_index("2020-12"), 1)
        self.assertEqual(month_string(month_index("2019-07")), "2019-07")
        for bad in ("2020-13", "2020", "March", None):
            with self.assertRaises(ValueError):
                month_index(bad)

    def test_stable_hash(self):
        """Test that the hash ignores key order."""
        self.assertEqual(stable_hash({'a': 1, 'b': [1, 2]}), stable_hash({'b': [1, 2], 'a': 1}))
        self.assertNotEqual(stable_hash({'a': 1}), stable_hash({'a': 2}))
        self.assertEqual(len(stable_hash({})), 64)

    def test_write_csv_float_format(self):
        """Test the fixed float format."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "frame.csv")
            write_csv(pd.DataFrame({'x': [1 / 3, 2.0]}), path)
            with open(path, 'r', encoding='utf-8') as f:
                self.assertEqual(f.read(), "x\n0.3333333333\n2\n")

    def test_setup_logging(self):
        """Test logger configuration."""
        logger = setup_logging("debug")
        self.assertEqual(logger.name, "credit_fusion")
        self.assertEqual(logger.level, logging.DEBUG)
        self.assertEqual(len(setup_logging("INFO").handlers), 1)


if __name__ == '__main__':
    unittest.main()
