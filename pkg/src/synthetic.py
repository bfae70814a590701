"""
Synthetic data generator for the credit fusion framework.
Produces channel tables in the ingestion schema with a planted label
signal in the text, in the ratio features, or only in both together.
"""

import logging
import os
from typing import Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from channel_loader import FILE_NAMES, ChannelFiles, ChannelLoader, feature_columns
from dataset import AGENCIES, RAW_CHANNEL_WIDTHS, Dataset
from ratings import MAX_CODE, NUM_MERGED_CLASSES, default_rating_map
from text_preprocessing import stop_words
from utils import derive_seed, make_rng, month_index, month_string, write_csv

logger = logging.getLogger("credit_fusion.synthetic")

SIGNALS = ("text_only", "numeric_only", "joint")
CONSONANTS = "bcdfghjklmnprstvz"
VOWELS = "aeiou"
FILLER_WORDS = ("the", "and", "we", "our", "this", "quarter", "year", "results")
RATIO_SIGNAL_FEATURE = 0


class SyntheticSpec(BaseModel):
    """Parameters of a synthetic dataset."""

    model_config = ConfigDict(extra='forbid')

    n: int = Field(ge=1)
    classes: int = Field(default=NUM_MERGED_CLASSES, ge=2, le=NUM_MERGED_CLASSES)
    signal: Literal["text_only", "numeric_only", "joint"] = "joint"
    seed: int = 0
    n_companies: Optional[int] = Field(default=None, ge=2)
    min_words: int = Field(default=40, ge=1)
    max_words: int = Field(default=80, ge=1)
    common_vocabulary: int = Field(default=300, ge=10)
    topic_words: int = Field(default=10, ge=1)
    topic_rate: float = Field(default=0.35, gt=0.0, lt=1.0)
    signal_strength: float = Field(default=3.0, gt=0.0)
    missing_value_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    messy_fraction: float = Field(default=0.3, ge=0.0, le=1.0)
    start: str = "2010-01"
    end: str = "2022-12"

    @model_validator(mode='after')
    def check_consistency(self):
        if self.n < self.classes:
            raise ValueError(f"n ({self.n}) must be at least the number of classes ({self.classes})")
        if self.max_words < self.min_words:
            raise ValueError("max_words must be at least min_words")
        months = month_index(self.end) - month_index(self.start) + 1
        if months < 1:
            raise ValueError(f"end {self.end} precedes start {self.start}")
        if self.company_count * months < self.n:
            raise ValueError(f"{self.company_count} companies over {months} months cannot hold {self.n} records")
        return self

    @property
    def company_count(self) -> int:
        return self.n_companies if self.n_companies is not None else max(2, self.n // 8)

    @property
    def topic_count(self) -> int:
        if self.signal == "text_only":
            return self.classes
        if self.signal == "joint":
            return (self.classes + 1) // 2
        return 0


def _pseudo_words(rng: np.random.Generator, count: int, excluded: set) -> List[str]:
    words: List[str] = []
    seen = set(excluded)
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(str(rng.choice(list(CONSONANTS))) + str(rng.choice(list(VOWELS))) for _ in range(syllables))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _decorate(rng: np.random.Generator, words: List[str], record: int, messy: bool) -> str:
    sentences = []
    for start in range(0, len(words), 12):
        chunk = words[start:start + 12]
        sentence = " ".join(chunk)
        sentences.append(sentence[:1].upper() + sentence[1:] + rng.choice([".", ".", "!", "?", ";"]))
    text = " ".join(sentences)
    if messy:
        text = (f"{text} Visit https://ir.example.com/q{record} or e-mail ir{record}@example.com, "
                f"call 555-010-{record % 10000:04d}. THANK YOU!")
    return text


def generate_synthetic_frames(spec: SyntheticSpec) -> Dict[str, pd.DataFrame]:
    """
    Sample channel tables in the ingestion schema.

    Args:
        spec: Synthetic dataset parameters

    Returns:
        Frames keyed like ChannelLoader.read_files output
    """
    rng = make_rng(derive_seed(spec.seed, "synthetic"))
    rating_map = default_rating_map()
    n = spec.n

    labels = rng.permutation(np.arange(n) % spec.classes) + 1
    codes_by_class = {c: [code for code, merged in rating_map.code_to_merged.items() if merged == c]
                      for c in range(1, NUM_MERGED_CLASSES + 1)}
    rating_codes = np.array([rng.choice(codes_by_class[label]) for label in labels], dtype=np.int64)

    # record identity: each company holds distinct months
    months = month_index(spec.end) - month_index(spec.start) + 1
    companies = rng.permutation(n) % spec.company_count
    time_offsets = np.zeros(n, dtype=np.int64)
    for company in range(spec.company_count):
        members = np.flatnonzero(companies == company)
        time_offsets[members] = rng.choice(months, size=len(members), replace=False)
    issuers = [f"S{company:05d}" for company in companies]
    cusips = [f"{issuer}10{company % 10}" for issuer, company in zip(issuers, companies)]
    time_index = [month_string(month_index(spec.start) + int(offset)) for offset in time_offsets]
    keys = pd.DataFrame({'cusip': cusips, 'time_index': time_index})

    # numeric channels
    channels = {name: rng.standard_normal((n, width)) for name, width in RAW_CHANNEL_WIDTHS.items()}
    if spec.signal == "numeric_only":
        channels['ratios'][np.arange(n), labels - 1] += spec.signal_strength
    elif spec.signal == "joint":
        signs = 2.0 * ((labels - 1) % 2) - 1.0
        channels['ratios'][:, RATIO_SIGNAL_FEATURE] = signs * (0.5 + np.abs(rng.standard_normal(n)))
    if spec.missing_value_rate > 0:
        for values in channels.values():
            values[rng.random(values.shape) < spec.missing_value_rate] = np.nan

    # text channel
    excluded = set(stop_words()) | set(FILLER_WORDS)
    common = _pseudo_words(rng, spec.common_vocabulary, excluded)
    excluded |= set(common)
    topics = []
    for _ in range(spec.topic_count):
        topics.append(_pseudo_words(rng, spec.topic_words, excluded))
        excluded |= set(topics[-1])
    zipf = 1.0 / np.arange(1, len(common) + 1)
    zipf /= zipf.sum()

    texts = []
    for record in range(n):
        length = int(rng.integers(spec.min_words, spec.max_words + 1))
        words = list(rng.choice(common, size=length, p=zipf))
        if spec.topic_count:
            topic = labels[record] - 1 if spec.signal == "text_only" else (labels[record] - 1) // 2
            planted = rng.random(length) < spec.topic_rate
            for position in np.flatnonzero(planted):
                words[position] = rng.choice(topics[topic])
        fillers = rng.random(length) < 0.15
        for position in np.flatnonzero(fillers):
            words[position] = f"{rng.choice(FILLER_WORDS)} {words[position]}"
        texts.append(_decorate(rng, words, record, rng.random() < spec.messy_fraction))

    frames = {name: keys.join(pd.DataFrame(values, columns=feature_columns(name)))
              for name, values in channels.items()}
    frames['covariates'] = keys.assign(agency=rng.choice(AGENCIES, size=n).tolist(),
                                       last_rating_code=rng.integers(1, MAX_CODE + 1, size=n))
    frames['labels'] = keys.assign(rating_code=rating_codes, lag_months=rng.integers(2, 15, size=n),
                                   company_id=[issuer[:6] for issuer in issuers])
    frames['transcripts'] = keys.assign(text=texts)
    logger.info(f"Generated {n} synthetic '{spec.signal}' records over {spec.company_count} companies")
    return frames


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample a synthetic Dataset through the same assembly path as file ingestion."""
    dataset, _ = ChannelLoader().assemble(generate_synthetic_frames(spec))
    return dataset


def write_synthetic_files(spec: SyntheticSpec, directory: str, missing_fraction: float = 0.0) -> ChannelFiles:
    """
    Write a synthetic channel file set.

    Args:
        spec: Synthetic dataset parameters
        directory: Output directory (created if needed)
        missing_fraction: Fraction of rows dropped from each non-label file

    Returns:
        Paths of the written files
    """
    os.makedirs(directory, exist_ok=True)
    frames = generate_synthetic_frames(spec)
    rng = make_rng(derive_seed(spec.seed, "missing"))
    files = ChannelFiles.from_directory(directory)

    for name, frame in frames.items():
        if missing_fraction > 0 and name != 'labels':
            frame = frame[rng.random(len(frame)) >= missing_fraction]
        if name == 'labels':
            # company ids are derived from the cusip issuer code on ingestion
            frame = frame.drop(columns=['company_id'])
        path = getattr(files, name)
        if name == 'transcripts':
            frame.to_json(path, orient='records', lines=True, force_ascii=False)
        else:
            write_csv(frame, path)
    logger.info(f"Wrote synthetic channel files ({', '.join(FILE_NAMES.values())}) to {directory}")
    return files

