"""
Dataset containers for the credit fusion framework.
Holds the four numeric channels, the normalized transcripts, labels and
record metadata, plus the train-fitted imputation and scaling step.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ratings import NUM_MERGED_CLASSES, default_rating_map

NUMERIC_CHANNELS = ("bond", "ratios", "market", "covariate")
TEXT_CHANNEL = "text"
ALL_CHANNELS = NUMERIC_CHANNELS + (TEXT_CHANNEL,)
AGENCIES = ("MR", "SPR", "FR")
RAW_CHANNEL_WIDTHS = {"bond": 8, "ratios": 45, "market": 98}
CHANNEL_WIDTHS = {**RAW_CHANNEL_WIDTHS, "covariate": len(AGENCIES) + 1}
METADATA_COLUMNS = ["company_id", "cusip", "time_index", "agency", "lag_months"]
MIN_LAG_MONTHS = 2


class DataFormatError(ValueError):
    """Raised when input records do not follow the channel schemas."""


def encode_covariate(agency: str, last_rating_code: int) -> np.ndarray:
    """
    Encode the agency type and last observed rating.

    Args:
        agency: MR, SPR or FR
        last_rating_code: Last observed rating code 1..22

    Returns:
        Agency one-hot of width 3 followed by (merged class - 1) / 7
    """
    if agency not in AGENCIES:
        raise DataFormatError(f"Unknown agency '{agency}'. Use one of: {AGENCIES}")
    encoded = np.zeros(CHANNEL_WIDTHS["covariate"])
    encoded[AGENCIES.index(agency)] = 1.0
    merged = default_rating_map().map_rating(last_rating_code)
    encoded[-1] = (merged - 1) / (NUM_MERGED_CLASSES - 1)
    return encoded


@dataclass
class Sample:
    """One record: numeric channel vectors, transcript, label and metadata."""

    company_id: str
    cusip: str
    time_index: str
    agency: str
    bond: np.ndarray
    ratios: np.ndarray
    market: np.ndarray
    covariate: np.ndarray
    text: str
    label: int
    rating_code: int
    lag_months: int
    tokens: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in NUMERIC_CHANNELS:
            width = len(getattr(self, name))
            if width != CHANNEL_WIDTHS[name]:
                raise DataFormatError(f"channel '{name}' has width {width}, expected {CHANNEL_WIDTHS[name]}")
        if not 1 <= self.label <= NUM_MERGED_CLASSES:
            raise DataFormatError(f"label must lie in 1..{NUM_MERGED_CLASSES}, got {self.label}")
        if self.lag_months < MIN_LAG_MONTHS:
            raise DataFormatError(f"lag_months must be at least {MIN_LAG_MONTHS}, got {self.lag_months}")


@dataclass
class Batch:
    """Stacked model inputs for a group of records."""

    bond: np.ndarray
    ratios: np.ndarray
    market: np.ndarray
    covariate: np.ndarray
    tokens: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.bond)

    def channel(self, name: str) -> np.ndarray:
        if name == TEXT_CHANNEL:
            if self.tokens is None:
                raise DataFormatError("batch carries no token ids; encode the dataset first")
            return self.tokens
        if name not in NUMERIC_CHANNELS:
            raise ValueError(f"Unknown channel '{name}'. Use one of: {ALL_CHANNELS}")
        return getattr(self, name)


@dataclass
class Dataset:
    """Column-oriented record collection; row i of every field is one sample."""

    bond: np.ndarray
    ratios: np.ndarray
    market: np.ndarray
    covariate: np.ndarray
    texts: List[str]
    labels: np.ndarray
    rating_codes: np.ndarray
    metadata: pd.DataFrame
    tokens: Optional[np.ndarray] = None
    raw_texts: Optional[List[str]] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.labels)
        for name in NUMERIC_CHANNELS:
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.size == 0:
                values = values.reshape(0, CHANNEL_WIDTHS[name])
            if values.shape != (n, CHANNEL_WIDTHS[name]):
                raise DataFormatError(f"channel '{name}' has shape {values.shape}, "
                                      f"expected ({n}, {CHANNEL_WIDTHS[name]})")
            setattr(self, name, values)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.rating_codes = np.asarray(self.rating_codes, dtype=np.int64)
        if len(self.texts) != n or len(self.rating_codes) != n or len(self.metadata) != n:
            raise DataFormatError("dataset fields disagree on the number of records")
        missing = set(METADATA_COLUMNS) - set(self.metadata.columns)
        if missing:
            raise DataFormatError(f"metadata is missing columns {sorted(missing)}")
        if n and (self.labels.min() < 1 or self.labels.max() > NUM_MERGED_CLASSES):
            raise DataFormatError(f"labels must lie in 1..{NUM_MERGED_CLASSES}")
        if n and self.metadata['lag_months'].min() < MIN_LAG_MONTHS:
            raise DataFormatError(f"lag_months must be at least {MIN_LAG_MONTHS}")
        if self.tokens is not None and len(self.tokens) != n:
            raise DataFormatError("token matrix does not match the number of records")
        self.metadata = self.metadata.reset_index(drop=True)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def company_ids(self) -> np.ndarray:
        return self.metadata['company_id'].to_numpy()

    @property
    def time_indices(self) -> np.ndarray:
        return self.metadata['time_index'].to_numpy()

    @property
    def agencies(self) -> np.ndarray:
        return self.metadata['agency'].to_numpy()

    @property
    def lag_months(self) -> np.ndarray:
        return self.metadata['lag_months'].to_numpy()

    def channel(self, name: str) -> np.ndarray:
        if name == TEXT_CHANNEL:
            return self.tokens
        if name not in NUMERIC_CHANNELS:
            raise ValueError(f"Unknown channel '{name}'. Use one of: {ALL_CHANNELS}")
        return getattr(self, name)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            bond=self.bond[idx], ratios=self.ratios[idx], market=self.market[idx],
            covariate=self.covariate[idx],
            texts=[self.texts[i] for i in idx],
            labels=self.labels[idx], rating_codes=self.rating_codes[idx],
            metadata=self.metadata.iloc[idx].reset_index(drop=True),
            tokens=None if self.tokens is None else self.tokens[idx],
            raw_texts=None if self.raw_texts is None else [self.raw_texts[i] for i in idx],
        )

    def with_tokens(self, tokens: np.ndarray) -> "Dataset":
        return Dataset(
            bond=self.bond, ratios=self.ratios, market=self.market, covariate=self.covariate,
            texts=self.texts, labels=self.labels, rating_codes=self.rating_codes,
            metadata=self.metadata, tokens=np.asarray(tokens, dtype=np.int64), raw_texts=self.raw_texts,
        )

    def sample(self, i: int) -> Sample:
        row = self.metadata.iloc[i]
        return Sample(
            company_id=row['company_id'], cusip=row['cusip'], time_index=row['time_index'],
            agency=row['agency'], bond=self.bond[i], ratios=self.ratios[i], market=self.market[i],
            covariate=self.covariate[i], text=self.texts[i], label=int(self.labels[i]),
            rating_code=int(self.rating_codes[i]), lag_months=int(row['lag_months']),
            tokens=None if self.tokens is None else self.tokens[i],
        )

    def batch(self, indices: Optional[Sequence[int]] = None) -> Batch:
        idx = np.arange(len(self)) if indices is None else np.asarray(indices, dtype=np.int64)
        return Batch(
            bond=self.bond[idx], ratios=self.ratios[idx], market=self.market[idx],
            covariate=self.covariate[idx],
            tokens=None if self.tokens is None else self.tokens[idx],
            labels=self.labels[idx],
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            return cls.empty()
        tokens = None
        if all(s.tokens is not None for s in samples):
            tokens = np.stack([s.tokens for s in samples])
        return cls(
            bond=np.stack([s.bond for s in samples]),
            ratios=np.stack([s.ratios for s in samples]),
            market=np.stack([s.market for s in samples]),
            covariate=np.stack([s.covariate for s in samples]),
            texts=[s.text for s in samples],
            labels=np.array([s.label for s in samples]),
            rating_codes=np.array([s.rating_code for s in samples]),
            metadata=pd.DataFrame({
                'company_id': [s.company_id for s in samples],
                'cusip': [s.cusip for s in samples],
                'time_index': [s.time_index for s in samples],
                'agency': [s.agency for s in samples],
                'lag_months': [s.lag_months for s in samples],
            }),
            tokens=tokens,
        )

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(
            bond=np.zeros((0, 8)), ratios=np.zeros((0, 45)), market=np.zeros((0, 98)),
            covariate=np.zeros((0, 4)), texts=[], labels=np.zeros(0, dtype=np.int64),
            rating_codes=np.zeros(0, dtype=np.int64),
            metadata=pd.DataFrame({c: pd.Series(dtype=object) for c in METADATA_COLUMNS}),
        )

    def get_data_summary(self) -> dict:
        """
        Generate summary statistics for the dataset.

        Returns:
            Dictionary with record counts, time range and class histogram
        """
        if len(self) == 0:
            return {'record_count': 0, 'time_range': None, 'class_counts': {}}
        labels, counts = np.unique(self.labels, return_counts=True)
        return {
            'record_count': len(self),
            'company_count': int(self.metadata['company_id'].nunique()),
            'time_range': {
                'start': str(self.metadata['time_index'].min()),
                'end': str(self.metadata['time_index'].max()),
            },
            'class_counts': {int(c): int(k) for c, k in zip(labels, counts)},
            'missing_values': {
                name: int(np.isnan(getattr(self, name)).sum()) for name in RAW_CHANNEL_WIDTHS
            },
        }


class ChannelScaler:
    """Median imputation and per-feature z-scoring of the raw numeric channels, fit on training records only."""

    def __init__(self):
        self.logger = logging.getLogger("credit_fusion.dataset")
        self.medians: Dict[str, np.ndarray] = {}
        self.means: Dict[str, np.ndarray] = {}
        self.stds: Dict[str, np.ndarray] = {}

    @property
    def is_fitted(self) -> bool:
        return bool(self.medians)

    def fit(self, dataset: Dataset) -> "ChannelScaler":
        if len(dataset) == 0:
            raise ValueError("Cannot fit the channel scaler on an empty dataset")
        self.logger.info(f"Fitting imputation and scaling on {len(dataset)} training records")
        for name in RAW_CHANNEL_WIDTHS:
            values = getattr(dataset, name)
            all_missing = np.isnan(values).all(axis=0)
            medians = np.nanmedian(np.where(all_missing, 0.0, values), axis=0)
            filled = np.where(np.isnan(values), medians, values)
            stds = filled.std(axis=0)
            self.medians[name] = medians
            self.means[name] = filled.mean(axis=0)
            # constant features pass through centered
            self.stds[name] = np.where(stds > 0, stds, 1.0)
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        if not self.is_fitted:
            raise RuntimeError("ChannelScaler.transform called before fit")
        try:
            scaled = {}
            for name in RAW_CHANNEL_WIDTHS:
                values = getattr(dataset, name)
                missing = int(np.isnan(values).sum())
                if missing:
                    self.logger.debug(f"Imputing {missing} missing '{name}' values")
                filled = np.where(np.isnan(values), self.medians[name], values)
                scaled[name] = (filled - self.means[name]) / self.stds[name]
            return Dataset(
                bond=scaled['bond'], ratios=scaled['ratios'], market=scaled['market'],
                covariate=dataset.covariate, texts=dataset.texts, labels=dataset.labels,
                rating_codes=dataset.rating_codes, metadata=dataset.metadata,
                tokens=dataset.tokens, raw_texts=dataset.raw_texts,
            )
        except Exception as e:
            self.logger.error(f"Failed to scale numeric channels: {e}")
            raise

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name in RAW_CHANNEL_WIDTHS:
            arrays[f"scaler.{name}.median"] = self.medians[name]
            arrays[f"scaler.{name}.mean"] = self.means[name]
            arrays[f"scaler.{name}.std"] = self.stds[name]
        return arrays

    @classmethod
    def from_arrays(cls, arrays) -> "ChannelScaler":
        scaler = cls()
        for name in RAW_CHANNEL_WIDTHS:
            scaler.medians[name] = np.asarray(arrays[f"scaler.{name}.median"])
            scaler.means[name] = np.asarray(arrays[f"scaler.{name}.mean"])
            scaler.stds[name] = np.asarray(arrays[f"scaler.{name}.std"])
        return scaler
