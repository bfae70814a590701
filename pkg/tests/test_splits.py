"""
Unit tests for dataset splits.
"""

import unittest
import numpy as np
import pandas as pd

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from splits import SplitError, make_split, split_oot, split_oou, split_random
from synthetic import SyntheticSpec, generate_synthetic


class TestSplits(unittest.TestCase):
    """Test cases for random, out-of-time and out-of-universe splits."""

    @classmethod
    def setUpClass(cls):
        """Generate one synthetic dataset for all split tests."""
        cls.dataset = generate_synthetic(SyntheticSpec(n=300, seed=4))

    def assertPartition(self, split, n):
        indices = np.concatenate([split.train, split.validation, split.test])
        self.assertEqual(len(indices), n)
        self.assertEqual(len(np.unique(indices)), n)

    def test_random_split_sizes(self):
        """Test floor rounding on 1000 records."""
        split = split_random(range(1000), seed=0)
        self.assertEqual(split.sizes(), {'train': 640, 'validation': 160, 'test': 200})
        self.assertPartition(split, 1000)

    def test_random_split_is_seeded(self):
        """Test that the same seed reproduces the split and another seed changes it."""
        first, second = split_random(range(50), seed=3), split_random(range(50), seed=3)
        np.testing.assert_array_equal(first.test, second.test)
        self.assertFalse(np.array_equal(first.test, split_random(range(50), seed=4).test))

    def test_random_split_needs_five_records(self):
        """Test the minimum dataset size."""
        with self.assertRaises(SplitError):
            split_random(range(4), seed=0)

    def test_out_of_time_ordering(self):
        """Test that every training timestamp precedes every test timestamp."""
        split = split_oot(self.dataset, seed=1)
        times = self.dataset.time_indices.astype(str)
        self.assertPartition(split, len(self.dataset))
        self.assertLess(times[split.train_validation].max(), times[split.test].min())
        self.assertGreaterEqual(len(split.test), int(0.2 * len(self.dataset)))

    def test_out_of_time_ties_go_to_test(self):
        """Test that records sharing the boundary month stay together in test."""
        metadata = pd.DataFrame({'time_index': ["2020-01"] * 6 + ["2020-02"] * 4})
        split = split_oot(metadata, cutoff_fraction=0.3, seed=0)
        np.testing.assert_array_equal(split.test, [6, 7, 8, 9])

    def test_out_of_time_needs_two_times(self):
        """Test that a single timestamp cannot be split in time."""
        with self.assertRaises(SplitError):
            split_oot(pd.DataFrame({'time_index': ["2020-01"] * 10}))

    def test_out_of_universe_holds_out_companies(self):
        """Test that no company appears on both sides."""
        split = split_oou(self.dataset, seed=2)
        companies = self.dataset.company_ids.astype(str)
        self.assertPartition(split, len(self.dataset))
        self.assertFalse(set(companies[split.train_validation]) & set(companies[split.test]))

    def test_out_of_universe_needs_two_companies(self):
        """Test the single-company error."""
        with self.assertRaises(SplitError):
            split_oou(pd.DataFrame({'company_id': ["a"] * 10}))

    def test_unknown_mode(self):
        """Test mode dispatch errors."""
        with self.assertRaises(SplitError):
            make_split(self.dataset, "sideways", seed=0)


if __name__ == '__main__':
    unittest.main()
