"""
Corpus exploration for the credit fusion framework.
Per-class transcript lengths and n-grams that are frequent in one rating
group but not in the other.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dataset import Dataset
from ratings import default_rating_map
from text_preprocessing import PAD_TOKEN

logger = logging.getLogger("credit_fusion.text_analytics")

DEFAULT_TOP_K = 30
GROUPS = ("high", "low")

Document = Union[str, Sequence[str]]


@dataclass
class NgramTable:
    """n-gram counts of one document group."""

    n: int
    counts: Counter = field(default_factory=Counter)
    group: Optional[str] = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def top(self, k: int) -> List[Tuple[Tuple[str, ...], int]]:
        """The k most frequent n-grams, ties broken lexicographically."""
        return sorted(self.counts.items(), key=lambda item: (-item[1], item[0]))[:k]


def _tokens(document: Document) -> List[str]:
    tokens = document.split() if isinstance(document, str) else list(document)
    return [t for t in tokens if t != PAD_TOKEN]


def ngram_counts(documents: Iterable[Document], n: int, group: Optional[str] = None) -> NgramTable:
    """
    Sliding-window n-gram counts summed over documents.

    Args:
        documents: Normalized strings or token sequences; pad tokens are ignored
        n: n-gram length
        group: Optional group label carried by the table

    Returns:
        NgramTable

    Raises:
        ValueError: If n < 1
    """
    if n < 1:
        raise ValueError(f"n-gram length must be at least 1, got {n}")
    counts: Counter = Counter()
    for document in documents:
        tokens = _tokens(document)
        counts.update(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return NgramTable(n=n, counts=counts, group=group)


def differential_ngrams(high: NgramTable, low: NgramTable,
                        top_k: int = DEFAULT_TOP_K) -> Tuple[List[Tuple[Tuple[str, ...], int]], List[Tuple[Tuple[str, ...], int]]]:
    """
    Top-k n-grams of each group that are not among the other group's top-k.

    Returns:
        (high-only list, low-only list), each ranked by count descending
    """
    if high.n != low.n:
        raise ValueError(f"cannot compare {high.n}-grams with {low.n}-grams")
    top_high, top_low = high.top(top_k), low.top(top_k)
    high_set = {ngram for ngram, _ in top_high}
    low_set = {ngram for ngram, _ in top_low}
    return ([(g, c) for g, c in top_high if g not in low_set],
            [(g, c) for g, c in top_low if g not in high_set])


def group_by_rating(dataset: Dataset, threshold_code: Optional[int] = None) -> Dict[str, List[str]]:
    """
    Split normalized transcripts by original rating code: high is code <= threshold, low is above.

    Args:
        dataset: Records with their 22-scale rating codes
        threshold_code: Defaults to the rating table's high-rating threshold (10)
    """
    if threshold_code is None:
        threshold_code = default_rating_map().high_rating_threshold
    high = dataset.rating_codes <= threshold_code
    groups = {
        'high': [text for text, is_high in zip(dataset.texts, high) if is_high],
        'low': [text for text, is_high in zip(dataset.texts, high) if not is_high],
    }
    logger.info(f"Rating groups at code {threshold_code}: {len(groups['high'])} high, {len(groups['low'])} low")
    return groups


def word_count_stats(dataset: Dataset) -> Dict[int, float]:
    """Mean normalized token count per merged class."""
    if len(dataset) == 0:
        raise ValueError("word counts need a nonempty dataset")
    lengths = np.array([len(_tokens(text)) for text in dataset.texts], dtype=np.float64)
    return {int(c): float(lengths[dataset.labels == c].mean()) for c in np.unique(dataset.labels)}


def differential_frame(dataset: Dataset, n_values: Sequence[int] = (1, 2, 3),
                       top_k: int = DEFAULT_TOP_K, threshold_code: Optional[int] = None) -> pd.DataFrame:
    """
    Differential n-gram lists for several n as rows (n, ngram, count, group).
    """
    groups = group_by_rating(dataset, threshold_code)
    rows = []
    for n in n_values:
        high = ngram_counts(groups['high'], n, 'high')
        low = ngram_counts(groups['low'], n, 'low')
        high_only, low_only = differential_ngrams(high, low, top_k)
        for group, ranked in (('high', high_only), ('low', low_only)):
            rows.extend({'n': n, 'ngram': " ".join(g), 'count': c, 'group': group} for g, c in ranked)
    return pd.DataFrame(rows, columns=['n', 'ngram', 'count', 'group'])


def word_count_frame(dataset: Dataset) -> pd.DataFrame:
    stats = word_count_stats(dataset)
    support = {int(c): int(k) for c, k in zip(*np.unique(dataset.labels, return_counts=True))}
    return pd.DataFrame({'class': list(stats), 'documents': [support[c] for c in stats],
                         'mean_words': list(stats.values())})
