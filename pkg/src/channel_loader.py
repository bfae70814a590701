"""
Channel ingestion for the credit fusion framework.
Reads the numeric channel CSVs, covariates, labels and transcript JSONL,
validates them and inner-joins the records on (cusip, time_index).
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from dataset import (
    AGENCIES, RAW_CHANNEL_WIDTHS, MIN_LAG_MONTHS, DataFormatError, Dataset, encode_covariate,
)
from ratings import MAX_CODE, MIN_CODE, default_rating_map
from text_preprocessing import preprocess_corpus
from utils import month_index, month_string

KEY_COLUMNS = ["cusip", "time_index"]
CUSIP_LENGTH = 9
ISSUER_CODE_LENGTH = 6
FILE_NAMES = {
    "bond": "bond.csv",
    "ratios": "ratios.csv",
    "market": "market.csv",
    "covariates": "covariates.csv",
    "labels": "labels.csv",
    "transcripts": "transcripts.jsonl",
}


@dataclass
class ChannelFiles:
    """Paths of one channel file set."""

    bond: str
    ratios: str
    market: str
    covariates: str
    labels: str
    transcripts: str

    @classmethod
    def from_directory(cls, directory: str) -> "ChannelFiles":
        return cls(**{name: os.path.join(directory, file_name) for name, file_name in FILE_NAMES.items()})

    def as_dict(self) -> Dict[str, str]:
        return {name: getattr(self, name) for name in FILE_NAMES}

    def missing(self) -> List[str]:
        return [path for path in self.as_dict().values() if not os.path.isfile(path)]


@dataclass
class LoadReport:
    joined: int
    dropped: int
    keys_per_file: Dict[str, int] = field(default_factory=dict)


def feature_columns(channel: str) -> List[str]:
    return [f"{channel}_{i}" for i in range(RAW_CHANNEL_WIDTHS[channel])]


class ChannelLoader:
    """Reads and joins channel files into a Dataset."""

    def __init__(self):
        self.logger = logging.getLogger("credit_fusion.channel_loader")
        self.rating_map = default_rating_map()

    def _read_csv(self, path: str) -> pd.DataFrame:
        try:
            frame = pd.read_csv(path, dtype=str, skip_blank_lines=False, encoding='utf-8')
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise DataFormatError(f"{path}: {e}")
        except pd.errors.EmptyDataError:
            raise DataFormatError(f"{path}: file is empty, a header row is required")
        # file line of each row: header is line 1
        frame.index = frame.index + 2
        return frame.dropna(how='all')

    def _require_columns(self, frame: pd.DataFrame, path: str, columns: List[str]) -> None:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")

    def _normalize_keys(self, frame: pd.DataFrame, path: str) -> pd.DataFrame:
        self._require_columns(frame, path, KEY_COLUMNS)
        normalized = frame.copy()
        cusips, months = [], []
        for line, cusip, time_index in zip(frame.index, frame['cusip'], frame['time_index']):
            cusip = "" if pd.isna(cusip) else str(cusip).strip()
            if len(cusip) != CUSIP_LENGTH or not cusip.isalnum():
                raise DataFormatError(f"{path}:{line}: invalid cusip {cusip!r}, expected {CUSIP_LENGTH} "
                                      f"alphanumeric characters")
            try:
                months.append(month_string(month_index(str(time_index).strip())))
            except ValueError as e:
                raise DataFormatError(f"{path}:{line}: {e}")
            cusips.append(cusip.upper())
        normalized['cusip'] = cusips
        normalized['time_index'] = months
        return self._drop_duplicate_keys(normalized, path)

    def _drop_duplicate_keys(self, frame: pd.DataFrame, path: str) -> pd.DataFrame:
        deduplicated = frame.drop_duplicates(subset=KEY_COLUMNS, keep='last')
        removed = len(frame) - len(deduplicated)
        if removed > 0:
            self.logger.warning(f"Removed {removed} duplicate (cusip, time_index) rows from {path}, keeping the last")
        return deduplicated

    def _integer_column(self, frame: pd.DataFrame, path: str, column: str, low: int, high: int = None) -> pd.Series:
        values = []
        for line, raw in zip(frame.index, frame[column]):
            try:
                value = int(str(raw).strip())
            except ValueError:
                raise DataFormatError(f"{path}:{line}: {column} must be an integer, got {raw!r}")
            if value < low or (high is not None and value > high):
                bound = f"in {low}..{high}" if high is not None else f">= {low}"
                raise DataFormatError(f"{path}:{line}: {column} must be {bound}, got {value}")
            values.append(value)
        return pd.Series(values, index=frame.index, dtype=np.int64)

    def read_numeric_channel(self, path: str, channel: str) -> pd.DataFrame:
        """
        Read one numeric channel file.

        Args:
            path: CSV with cusip, time_index and the channel's feature columns
            channel: bond, ratios or market

        Returns:
            DataFrame keyed by cusip/time_index with float feature columns

        Raises:
            DataFormatError: On a width mismatch or a non-numeric cell (names file and line)
        """
        frame = self._read_csv(path)
        self._require_columns(frame, path, KEY_COLUMNS)
        features = [c for c in frame.columns if c not in KEY_COLUMNS]
        width = RAW_CHANNEL_WIDTHS[channel]
        if len(features) != width:
            raise DataFormatError(f"{path}: channel '{channel}' has {len(features)} feature columns, expected {width}")

        raw = frame[features]
        values = raw.apply(pd.to_numeric, errors='coerce')
        malformed = raw.notna() & values.isna()
        if malformed.any().any():
            line = malformed.any(axis=1).idxmax()
            column = malformed.loc[line].idxmax()
            raise DataFormatError(f"{path}:{line}: non-numeric value {raw.loc[line, column]!r} in column '{column}'")

        keyed = self._normalize_keys(frame[KEY_COLUMNS], path)
        result = keyed.join(values.set_axis(feature_columns(channel), axis=1))
        self.logger.info(f"Read {len(result)} '{channel}' records from {path}")
        return result.reset_index(drop=True)

    def read_covariates(self, path: str) -> pd.DataFrame:
        frame = self._read_csv(path)
        self._require_columns(frame, path, KEY_COLUMNS + ['agency', 'last_rating_code'])
        for line, agency in zip(frame.index, frame['agency']):
            if agency not in AGENCIES:
                raise DataFormatError(f"{path}:{line}: agency must be one of {AGENCIES}, got {agency!r}")
        codes = self._integer_column(frame, path, 'last_rating_code', MIN_CODE, MAX_CODE)
        keyed = self._normalize_keys(frame[KEY_COLUMNS], path)
        result = keyed.assign(agency=frame['agency'], last_rating_code=codes)
        self.logger.info(f"Read {len(result)} covariate records from {path}")
        return result.reset_index(drop=True)

    def read_labels(self, path: str) -> pd.DataFrame:
        frame = self._read_csv(path)
        self._require_columns(frame, path, KEY_COLUMNS + ['rating_code', 'lag_months'])
        codes = self._integer_column(frame, path, 'rating_code', MIN_CODE, MAX_CODE)
        lags = self._integer_column(frame, path, 'lag_months', MIN_LAG_MONTHS)
        keyed = self._normalize_keys(frame[KEY_COLUMNS], path)
        result = keyed.assign(rating_code=codes, lag_months=lags)
        if 'company_id' in frame.columns:
            result['company_id'] = frame['company_id'].str.strip()
        else:
            result['company_id'] = None
        issuer = result['cusip'].str[:ISSUER_CODE_LENGTH]
        result['company_id'] = result['company_id'].where(result['company_id'].notna() & (result['company_id'] != ""),
                                                          issuer)
        self.logger.info(f"Read {len(result)} label records from {path}")
        return result.reset_index(drop=True)

    def read_transcripts(self, path: str) -> pd.DataFrame:
        records, lines = [], []
        try:
            with open(path, 'r', encoding='utf-8') as f:
                for line_number, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as e:
                        raise DataFormatError(f"{path}:{line_number}: invalid JSON ({e.msg})")
                    if not isinstance(record, dict) or not {'cusip', 'time_index', 'text'} <= set(record):
                        raise DataFormatError(f"{path}:{line_number}: expected an object with cusip, time_index and text")
                    if not isinstance(record['text'], str):
                        raise DataFormatError(f"{path}:{line_number}: text must be a string")
                    records.append({k: record[k] for k in ('cusip', 'time_index', 'text')})
                    lines.append(line_number)
        except UnicodeDecodeError as e:
            raise DataFormatError(f"{path}: not valid UTF-8 ({e})")

        frame = pd.DataFrame(records, columns=['cusip', 'time_index', 'text'], index=lines)
        keyed = self._normalize_keys(frame, path)
        self.logger.info(f"Read {len(keyed)} transcripts from {path}")
        return keyed.reset_index(drop=True)

    def read_files(self, files: ChannelFiles) -> Dict[str, pd.DataFrame]:
        missing = files.missing()
        if missing:
            raise FileNotFoundError(f"Channel files not found: {missing}")
        frames = {channel: self.read_numeric_channel(getattr(files, channel), channel)
                  for channel in RAW_CHANNEL_WIDTHS}
        frames['covariates'] = self.read_covariates(files.covariates)
        frames['labels'] = self.read_labels(files.labels)
        frames['transcripts'] = self.read_transcripts(files.transcripts)
        return frames

    def assemble(self, frames: Dict[str, pd.DataFrame]) -> Tuple[Dataset, LoadReport]:
        """
        Inner-join channel frames on (cusip, time_index) and build a Dataset.

        Args:
            frames: Output of read_files (or frames with the same columns)

        Returns:
            (dataset, report) where the report counts keys dropped by the join
        """
        keys = {name: set(zip(frame['cusip'], frame['time_index'])) for name, frame in frames.items()}
        all_keys = set().union(*keys.values())

        joined = frames['labels']
        for name in ('bond', 'ratios', 'market', 'covariates', 'transcripts'):
            joined = joined.merge(frames[name], on=KEY_COLUMNS, how='inner', validate='one_to_one')
        joined = joined.sort_values(KEY_COLUMNS[::-1]).reset_index(drop=True)

        report = LoadReport(joined=len(joined), dropped=len(all_keys) - len(joined),
                            keys_per_file={name: len(k) for name, k in keys.items()})
        if report.dropped:
            self.logger.info(f"Dropped {report.dropped} records missing at least one channel")
        self.logger.info(f"Joined {report.joined} records across all channels")

        if joined.empty:
            self.logger.warning("No record is present in every channel file")
            return Dataset.empty(), report

        raw_texts = joined['text'].tolist()
        dataset = Dataset(
            bond=joined[feature_columns('bond')].to_numpy(dtype=np.float64),
            ratios=joined[feature_columns('ratios')].to_numpy(dtype=np.float64),
            market=joined[feature_columns('market')].to_numpy(dtype=np.float64),
            covariate=np.stack([encode_covariate(a, c) for a, c in
                                zip(joined['agency'], joined['last_rating_code'])]),
            texts=preprocess_corpus(raw_texts),
            labels=self.rating_map.map_ratings(joined['rating_code']),
            rating_codes=joined['rating_code'].to_numpy(dtype=np.int64),
            metadata=joined[['company_id', 'cusip', 'time_index', 'agency', 'lag_months']].copy(),
            raw_texts=raw_texts,
        )
        return dataset, report

    def load(self, files: ChannelFiles) -> Tuple[Dataset, LoadReport]:
        try:
            return self.assemble(self.read_files(files))
        except Exception as e:
            self.logger.error(f"Failed to load channel files: {e}")
            raise


def load_channels(files: ChannelFiles) -> Tuple[Dataset, LoadReport]:
    """Read, validate and join a channel file set."""
    return ChannelLoader().load(files)
