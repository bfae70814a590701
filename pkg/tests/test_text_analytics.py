"""
Unit tests for corpus exploration.
"""

import unittest
import numpy as np

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from dataset import Dataset
from synthetic import SyntheticSpec, generate_synthetic
from text_analytics import (NgramTable, differential_frame, differential_ngrams, group_by_rating, ngram_counts,
                            word_count_frame, word_count_stats)


class TestNgrams(unittest.TestCase):
    """Test cases for n-gram counting."""

    def test_unigram_counts(self):
        """Test a three-token document."""
        table = ngram_counts([["a", "b", "a"]], 1)
        self.assertEqual(dict(table.counts), {("a",): 2, ("b",): 1})
        self.assertEqual(table.total, 3)

    def test_bigrams_across_documents(self):
        """Test that windows do not cross document boundaries."""
        table = ngram_counts(["a b", "b a", "a b <pad> <pad>"], 2, group="high")
        self.assertEqual(dict(table.counts), {("a", "b"): 2, ("b", "a"): 1})
        self.assertEqual(table.group, "high")

    def test_short_document_and_bad_n(self):
        """Test documents shorter than n and n < 1."""
        self.assertEqual(ngram_counts(["a"], 2).total, 0)
        with self.assertRaises(ValueError):
            ngram_counts(["a"], 0)

    def test_top_breaks_ties_lexicographically(self):
        """Test ranking order."""
        table = NgramTable(n=1)
        table.counts.update({("b",): 2, ("a",): 2, ("c",): 5})
        self.assertEqual(table.top(2), [(("c",), 5), (("a",), 2)])

    def test_differential_lists(self):
        """Test n-grams frequent in one group but outside the other's top-k."""
        high = ngram_counts(["x x x y y shared shared shared shared"], 1)
        low = ngram_counts(["z z z shared shared shared shared y"], 1)
        high_only, low_only = differential_ngrams(high, low, top_k=2)
        self.assertEqual(high_only, [(("x",), 3)])
        self.assertEqual(low_only, [(("z",), 3)])

    def test_differential_needs_same_n(self):
        """Test mismatched n-gram lengths."""
        with self.assertRaises(ValueError):
            differential_ngrams(ngram_counts(["a b"], 1), ngram_counts(["a b"], 2))


class TestCorpusStats(unittest.TestCase):
    """Test cases for dataset-level statistics."""

    @classmethod
    def setUpClass(cls):
        """Generate a synthetic corpus."""
        cls.dataset = generate_synthetic(SyntheticSpec(n=64, seed=11))

    def test_group_by_rating(self):
        """Test the split at the high-rating threshold."""
        groups = group_by_rating(self.dataset)
        self.assertEqual(len(groups['high']), int(np.sum(self.dataset.rating_codes <= 10)))
        self.assertEqual(len(groups['high']) + len(groups['low']), 64)
        self.assertEqual(len(group_by_rating(self.dataset, threshold_code=22)['low']), 0)

    def test_word_counts(self):
        """Test per-class mean lengths."""
        stats = word_count_stats(self.dataset)
        self.assertEqual(sorted(stats), list(range(1, 9)))
        first = np.mean([len(t.split()) for t, c in zip(self.dataset.texts, self.dataset.labels) if c == 1])
        self.assertAlmostEqual(stats[1], first)

        frame = word_count_frame(self.dataset)
        self.assertEqual(list(frame.columns), ['class', 'documents', 'mean_words'])
        self.assertEqual(frame['documents'].sum(), 64)

    def test_word_counts_empty(self):
        """Test the empty dataset."""
        with self.assertRaises(ValueError):
            word_count_stats(Dataset.empty())

    def test_differential_frame(self):
        """Test the exported table."""
        frame = differential_frame(self.dataset, n_values=(1, 2), top_k=10)
        self.assertEqual(list(frame.columns), ['n', 'ngram', 'count', 'group'])
        self.assertTrue(set(frame['n']) <= {1, 2})
        self.assertTrue(set(frame['group']) <= {'high', 'low'})
        bigrams = frame.loc[frame['n'] == 2, 'ngram']
        self.assertTrue(all(len(g.split()) == 2 for g in bigrams))


if __name__ == '__main__':
    unittest.main()
