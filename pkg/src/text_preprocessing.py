"""
Text preprocessing for the credit fusion framework.
Normalizes transcript text, fits the frequency-ordered vocabulary and
encodes documents to fixed-length id sequences.
"""

import logging
import re
import unicodedata
from collections import Counter
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Sequence

import numpy as np

from config import load_stopwords

logger = logging.getLogger("credit_fusion.text_preprocessing")

PAD_TOKEN = "<pad>"
UNKNOWN_TOKEN = "<unk>"
URL_TOKEN = "<url>"
EMAIL_TOKEN = "<email>"
PHONE_TOKEN = "<phone>"
SPECIAL_TOKENS = (PAD_TOKEN, UNKNOWN_TOKEN, URL_TOKEN, EMAIL_TOKEN, PHONE_TOKEN)
PAD_ID = 0
UNKNOWN_ID = 1

# Private-use placeholders survive punctuation stripping and are swapped back at the end
_PLACEHOLDERS = {
    "\ue000": URL_TOKEN,
    "\ue001": EMAIL_TOKEN,
    "\ue002": PHONE_TOKEN,
}

EMAIL_PATTERN = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
URL_PATTERN = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
PHONE_PATTERN = re.compile(r"(?<!\w)(?:\+?\d{1,3}[\s.-]?)?(?:\(\d{3}\)|\d{3})[\s.-]?\d{3}[\s.-]?\d{4}(?!\w)")
APOSTROPHES = "'’‘`"

# UTF-8 text decoded as cp1252, the usual transcript corruption
MOJIBAKE_REPLACEMENTS = {
    "â€™": "’",
    "â€˜": "‘",
    "â€œ": "“",
    "â€\u009d": "”",
    "â€“": "–",
    "â€”": "—",
    "â€¦": "…",
    "Ã©": "é",
    "Ã¨": "è",
    "Ã¡": "á",
    "Ã³": "ó",
    "Ã¶": "ö",
    "Ã¼": "ü",
    "Ã±": "ñ",
    "Â ": " ",
    "Â": "",
}


@lru_cache(maxsize=1)
def stop_words() -> FrozenSet[str]:
    return frozenset(load_stopwords())


def fix_mojibake(text: str) -> str:
    """Repair common double-encoding artifacts and apply NFKC normalization."""
    for broken, fixed in MOJIBAKE_REPLACEMENTS.items():
        text = text.replace(broken, fixed)
    return unicodedata.normalize("NFKC", text)


def _strip_punctuation(text: str) -> str:
    for mark in APOSTROPHES:
        text = text.replace(mark, "")
    return "".join(
        " " if unicodedata.category(ch)[0] in ("P", "S") else ch
        for ch in text
    )


def preprocess_text(raw: str) -> str:
    """
    Normalize a raw transcript.

    Mojibake is repaired, URLs, e-mail addresses and phone numbers become
    special tokens, text is lowercased, punctuation is stripped and stop
    words are removed.

    Args:
        raw: Raw document text

    Returns:
        Space-separated normalized tokens
    """
    if not raw:
        return ""
    text = fix_mojibake(raw)
    text = EMAIL_PATTERN.sub(" \ue001 ", text)
    text = URL_PATTERN.sub(" \ue000 ", text)
    text = PHONE_PATTERN.sub(" \ue002 ", text)
    text = _strip_punctuation(text.lower())

    excluded = stop_words()
    tokens = []
    for token in text.split():
        if token in _PLACEHOLDERS:
            tokens.append(_PLACEHOLDERS[token])
        elif token not in excluded:
            tokens.append(token)
    return " ".join(tokens)


def preprocess_corpus(documents: Iterable[str]) -> List[str]:
    return [preprocess_text(doc) for doc in documents]


class Vocabulary:
    """Frequency-ordered token to id map with reserved ids 0..4 for special tokens."""

    def __init__(self, id_to_token: Sequence[str], max_size: int):
        if tuple(id_to_token[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"Vocabulary must start with the reserved tokens {SPECIAL_TOKENS}")
        if len(set(id_to_token)) != len(id_to_token):
            raise ValueError("Vocabulary tokens must be unique")
        self.id_to_token: List[str] = list(id_to_token)
        self.token_to_id: Dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        self.max_size = max_size

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unknown_id(self) -> int:
        return UNKNOWN_ID

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNKNOWN_ID)

    def to_dict(self) -> Dict:
        return {'max_size': self.max_size, 'tokens': self.id_to_token}

    @classmethod
    def from_dict(cls, payload: Dict) -> "Vocabulary":
        return cls(payload['tokens'], int(payload['max_size']))


def fit_vocabulary(corpus: Sequence[str], max_size: int) -> Vocabulary:
    """
    Fit a vocabulary on normalized documents.

    Ids after the reserved block follow descending corpus frequency, ties
    broken lexicographically. Tokens beyond max_size map to the unknown id.

    Args:
        corpus: Normalized documents
        max_size: Total vocabulary size including reserved tokens

    Returns:
        Fitted Vocabulary

    Raises:
        ValueError: If the corpus is empty or max_size is below the reserved count
    """
    if max_size < len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must be at least {len(SPECIAL_TOKENS)} (reserved tokens), got {max_size}")
    if len(corpus) == 0:
        raise ValueError("Cannot fit a vocabulary on an empty corpus")

    counter = Counter()
    for document in corpus:
        counter.update(document.split())
    for token in SPECIAL_TOKENS:
        counter.pop(token, None)

    ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
    capacity = max_size - len(SPECIAL_TOKENS)
    kept = [token for token, _ in ranked[:capacity]]
    if len(ranked) > capacity:
        logger.info(f"Vocabulary capped at {max_size}: {len(ranked) - capacity} rare tokens map to {UNKNOWN_TOKEN}")
    logger.info(f"Fitted vocabulary of {len(kept) + len(SPECIAL_TOKENS)} tokens from {len(corpus)} documents")
    return Vocabulary(list(SPECIAL_TOKENS) + kept, max_size)


def encode_text(vocab: Vocabulary, normalized: str, max_len: int) -> List[int]:
    """
    Encode a normalized document to exactly max_len ids.

    Args:
        vocab: Fitted vocabulary
        normalized: Output of preprocess_text
        max_len: Output length; longer documents keep their head, shorter ones are right-padded

    Returns:
        List of max_len token ids
    """
    if max_len < 1:
        raise ValueError(f"max_len must be positive, got {max_len}")
    ids = [vocab.lookup(token) for token in normalized.split()[:max_len]]
    return ids + [PAD_ID] * (max_len - len(ids))


def encode_corpus(vocab: Vocabulary, documents: Sequence[str], max_len: int) -> np.ndarray:
    """Encode documents to an [n x max_len] integer matrix."""
    encoded = np.full((len(documents), max_len), PAD_ID, dtype=np.int64)
    for row, document in enumerate(documents):
        encoded[row] = encode_text(vocab, document, max_len)
    return encoded
