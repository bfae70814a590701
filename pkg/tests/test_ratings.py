"""
Unit tests for rating conversion.
"""

import copy
import unittest

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from config import load_rating_config
from ratings import RatingMap, default_rating_map, map_rating


class TestRatingMap(unittest.TestCase):
    """Test cases for RatingMap."""

    def setUp(self):
        """Set up the shipped rating table."""
        self.ratings = default_rating_map()

    def test_full_code_table(self):
        """Test every code maps to its merged class."""
        expected = {code: 1 for code in range(1, 6)}
        expected.update({6: 2, 7: 3, 8: 4, 9: 5})
        expected.update({code: 6 for code in (10, 11, 12)})
        expected.update({code: 7 for code in (13, 14, 15)})
        expected.update({code: 8 for code in range(16, 23)})
        self.assertEqual({code: map_rating(code) for code in range(1, 23)}, expected)

    def test_out_of_range_codes(self):
        """Test codes outside 1..22 raise."""
        for code in (0, 23, -1, "x", None):
            with self.assertRaises(ValueError):
                self.ratings.map_rating(code)

    def test_merged_classes_are_monotone(self):
        """Test better codes never map to worse classes."""
        merged = [map_rating(code) for code in range(1, 23)]
        self.assertEqual(merged, sorted(merged))

    def test_letter_grades(self):
        """Test agency letter conversion on both scales."""
        self.assertEqual(self.ratings.code_from_letter("Baa2", "MR"), 9)
        self.assertEqual(self.ratings.code_from_letter("bbb-", "SPR"), 10)
        self.assertEqual(self.ratings.code_from_letter(" AA+ ", "FR"), 2)

    def test_shared_letter_resolves_to_best_code(self):
        """Test that a letter spanning two codes maps to the lower one."""
        self.assertEqual(self.ratings.code_from_letter("B3", "MR"), 16)
        self.assertEqual(self.ratings.code_from_letter("Ca", "MR"), 19)

    def test_unknown_letter_or_agency(self):
        """Test letter conversion errors."""
        with self.assertRaises(ValueError):
            self.ratings.code_from_letter("ZZZ", "MR")
        with self.assertRaises(ValueError):
            self.ratings.code_from_letter("AAA", "XX")

    def test_high_rating_threshold(self):
        """Test the high/low boundary at code 10."""
        self.assertTrue(self.ratings.is_high_rating(10))
        self.assertFalse(self.ratings.is_high_rating(11))

    def test_reference_frequencies(self):
        """Test the shipped class distribution, which is rounded to whole percents."""
        self.assertEqual(self.ratings.reference_frequencies[6], 23.0)
        self.assertAlmostEqual(sum(self.ratings.reference_frequencies.values()), 98.0)

    def test_merged_class_frequencies(self):
        """Test observed class percentages."""
        frequencies = self.ratings.merged_class_frequencies([1, 2, 6, 22])
        self.assertEqual(frequencies[1], 50.0)
        self.assertEqual(frequencies[2], 25.0)
        self.assertEqual(frequencies[8], 25.0)
        self.assertEqual(frequencies[4], 0.0)

    def test_table_validation(self):
        """Test that an incomplete or non-monotone table is rejected."""
        config = load_rating_config()
        missing = copy.deepcopy(config)
        missing['ratings'] = missing['ratings'][:-1]
        with self.assertRaises(ValueError):
            RatingMap(missing)

        swapped = copy.deepcopy(config)
        swapped['ratings'][0]['merged_class'] = 8
        with self.assertRaises(ValueError):
            RatingMap(swapped)


if __name__ == '__main__':
    unittest.main()
