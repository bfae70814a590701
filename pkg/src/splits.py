"""
Dataset splits for the credit fusion framework.
Random, out-of-time and out-of-universe partitions into train, validation
and test index sets.
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from utils import make_rng

logger = logging.getLogger("credit_fusion.splits")

SPLIT_MODES = ("random", "oot", "oou")
TEST_FRACTION = 0.2
VALIDATION_FRACTION = 0.2
MIN_RECORDS = 5


class SplitError(ValueError):
    """Raised when a dataset cannot be partitioned as requested."""


@dataclass
class DatasetSplit:
    """Disjoint, exhaustive index sets into one dataset."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @property
    def train_validation(self) -> np.ndarray:
        return np.sort(np.concatenate([self.train, self.validation]))

    def sizes(self) -> Dict[str, int]:
        return {'train': len(self.train), 'validation': len(self.validation), 'test': len(self.test)}


def _metadata(dataset) -> pd.DataFrame:
    return dataset if isinstance(dataset, pd.DataFrame) else dataset.metadata


def _split_off(indices: np.ndarray, fraction: float, rng: np.random.Generator):
    shuffled = rng.permutation(indices)
    held_out = int(np.floor(fraction * len(indices)))
    return np.sort(shuffled[held_out:]), np.sort(shuffled[:held_out])


def _train_validation(indices: np.ndarray, test: np.ndarray, seed: int,
                      validation_fraction: float) -> DatasetSplit:
    train, validation = _split_off(indices, validation_fraction, make_rng(seed))
    return DatasetSplit(train=train, validation=validation, test=np.sort(test))


def split_random(dataset, seed: int, test_fraction: float = TEST_FRACTION,
                 validation_fraction: float = VALIDATION_FRACTION) -> DatasetSplit:
    """
    Random split: floor(20%) test, floor(20%) of the rest validation, remainder train.

    Args:
        dataset: Dataset, metadata frame or anything with a length
        seed: Shuffle seed

    Returns:
        DatasetSplit

    Raises:
        SplitError: If the dataset has fewer than 5 records
    """
    n = len(dataset)
    if n < MIN_RECORDS:
        raise SplitError(f"random split needs at least {MIN_RECORDS} records, got {n}")
    rng = make_rng(seed)
    rest, test = _split_off(np.arange(n), test_fraction, rng)
    train, validation = _split_off(rest, validation_fraction, rng)
    logger.info(f"Random split: {len(train)} train, {len(validation)} validation, {len(test)} test")
    return DatasetSplit(train=train, validation=validation, test=test)


def split_oot(dataset, cutoff_fraction: float = TEST_FRACTION, seed: int = 0,
              validation_fraction: float = VALIDATION_FRACTION) -> DatasetSplit:
    """
    Out-of-time split: the latest cutoff_fraction of records form the test set.

    Records sharing the boundary timestamp all go to test, so every training
    timestamp precedes every test timestamp. Train and validation are then
    drawn at random from the earlier records.

    Raises:
        SplitError: If all timestamps are equal or no record remains for training
    """
    times = _metadata(dataset)['time_index'].to_numpy().astype(str)
    n = len(times)
    if len(np.unique(times)) < 2:
        raise SplitError("out-of-time split needs at least two distinct time indices")

    order = np.argsort(times, kind='stable')
    test_count = max(1, int(np.floor(cutoff_fraction * n)))
    boundary = times[order[n - test_count]]
    test = np.flatnonzero(times >= boundary)
    earlier = np.flatnonzero(times < boundary)
    if len(earlier) == 0:
        raise SplitError(f"boundary time {boundary} leaves no records for training")
    split = _train_validation(earlier, test, seed, validation_fraction)
    logger.info(f"Out-of-time split at {boundary}: {len(earlier)} train+validation, {len(test)} test")
    return split


def split_oou(dataset, fraction: float = TEST_FRACTION, seed: int = 0,
              validation_fraction: float = VALIDATION_FRACTION) -> DatasetSplit:
    """
    Out-of-universe split: a seeded fraction of companies is held out entirely.

    Raises:
        SplitError: If fewer than two companies are present
    """
    companies = _metadata(dataset)['company_id'].to_numpy().astype(str)
    unique = np.unique(companies)
    if len(unique) < 2:
        raise SplitError(f"out-of-universe split needs at least two companies, got {len(unique)}")

    rng = make_rng(seed)
    held_out_count = min(len(unique) - 1, max(1, int(np.floor(fraction * len(unique)))))
    held_out = rng.permutation(unique)[:held_out_count]
    in_test = np.isin(companies, held_out)
    split = _train_validation(np.flatnonzero(~in_test), np.flatnonzero(in_test),
                              seed + 1, validation_fraction)
    logger.info(f"Out-of-universe split: {held_out_count} of {len(unique)} companies held out, "
                f"{len(split.test)} test records")
    return split


def make_split(dataset, mode: str, seed: int) -> DatasetSplit:
    if mode == "random":
        return split_random(dataset, seed)
    if mode == "oot":
        return split_oot(dataset, seed=seed)
    if mode == "oou":
        return split_oou(dataset, seed=seed)
    raise SplitError(f"Unknown split mode '{mode}'. Use one of: {SPLIT_MODES}")
