"""
Rating conversion for the credit fusion framework.
Maps the 22 agency rating codes to the 8 merged classes used as labels and
converts agency letter grades to codes.
"""

import logging
from functools import lru_cache
from typing import Dict, Iterable, List, Optional

import numpy as np

from config import load_rating_config

MIN_CODE = 1
MAX_CODE = 22
NUM_MERGED_CLASSES = 8


class RatingMap:
    """Table-driven conversion between letter grades, codes and merged classes."""

    def __init__(self, rating_config: Optional[Dict] = None):
        self.logger = logging.getLogger("credit_fusion.ratings")
        config = rating_config if rating_config is not None else load_rating_config()
        self.agencies: Dict[str, Dict[str, str]] = config['agencies']
        self.high_rating_threshold: int = int(config.get('high_rating_threshold', 10))
        self.reference_frequencies = {
            int(k): float(v) for k, v in config.get('merged_class_frequency_percent', {}).items()
        }

        rows = sorted(config['ratings'], key=lambda r: r['code'])
        self.code_to_merged: Dict[int, int] = {int(r['code']): int(r['merged_class']) for r in rows}
        self._letters: Dict[str, Dict[str, int]] = {}
        for row in rows:
            for scale in ('moodys', 'fitch_sp'):
                # a letter spanning several codes resolves to its best (lowest) code
                self._letters.setdefault(scale, {}).setdefault(row[scale].upper(), int(row['code']))

        self._validate()

    def _validate(self) -> None:
        codes = sorted(self.code_to_merged)
        if codes != list(range(MIN_CODE, MAX_CODE + 1)):
            raise ValueError(f"Rating table must cover codes {MIN_CODE}..{MAX_CODE}, got {codes}")
        merged = [self.code_to_merged[c] for c in codes]
        if any(b < a for a, b in zip(merged, merged[1:])):
            raise ValueError("Merged classes must be non-decreasing in rating code")
        if sorted(set(merged)) != list(range(1, NUM_MERGED_CLASSES + 1)):
            raise ValueError(f"Merged classes must cover 1..{NUM_MERGED_CLASSES}")

    @property
    def merged_classes(self) -> List[int]:
        return list(range(1, NUM_MERGED_CLASSES + 1))

    def map_rating(self, code: int) -> int:
        """
        Convert a rating code to its merged class.

        Args:
            code: Agency rating code in 1..22

        Returns:
            Merged class in 1..8

        Raises:
            ValueError: If the code is outside 1..22
        """
        try:
            return self.code_to_merged[int(code)]
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"Rating code must be an integer in {MIN_CODE}..{MAX_CODE}, got {code!r}")

    def map_ratings(self, codes: Iterable[int]) -> np.ndarray:
        return np.array([self.map_rating(c) for c in codes], dtype=np.int64)

    def code_from_letter(self, letter: str, agency: str) -> int:
        """
        Convert an agency letter grade to a rating code.

        Args:
            letter: Letter grade such as 'Baa2' or 'BBB'
            agency: MR (Moody's), SPR (S&P) or FR (Fitch)

        Returns:
            Rating code in 1..22
        """
        if agency not in self.agencies:
            raise ValueError(f"Unknown agency '{agency}'. Use one of: {sorted(self.agencies)}")
        scale = self.agencies[agency]['scale']
        code = self._letters[scale].get(letter.strip().upper())
        if code is None:
            raise ValueError(f"Unknown {self.agencies[agency]['name']} rating '{letter}'")
        return code

    def is_high_rating(self, code: int) -> bool:
        return int(code) <= self.high_rating_threshold

    def merged_class_frequencies(self, codes: Iterable[int]) -> Dict[int, float]:
        """
        Percentage of records in each merged class.

        Args:
            codes: Rating codes of a dataset

        Returns:
            Merged class -> percent of records (0 for absent classes)
        """
        merged = self.map_ratings(codes)
        if merged.size == 0:
            self.logger.warning("No rating codes given, all frequencies are zero")
            return {c: 0.0 for c in self.merged_classes}
        counts = np.bincount(merged, minlength=NUM_MERGED_CLASSES + 1)[1:]
        return {c: float(100.0 * counts[c - 1] / merged.size) for c in self.merged_classes}


@lru_cache(maxsize=1)
def default_rating_map() -> RatingMap:
    return RatingMap()


def map_rating(code: int) -> int:
    """Convert a rating code 1..22 to its merged class 1..8 with the shipped table."""
    return default_rating_map().map_rating(code)
