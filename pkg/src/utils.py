"""
Utility functions for the credit fusion framework.
Includes logging setup, seed derivation, month arithmetic and hashing.
"""

import hashlib
import json
import logging
import sys
from typing import Any, Optional

import numpy as np
import pandas as pd


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Set up logging configuration.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger("credit_fusion")
    logger.setLevel(getattr(logging, level.upper()))

    # Remove existing handlers to avoid duplicates
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(getattr(logging, level.upper()))
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    )
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger


def make_rng(seed: Optional[int]) -> np.random.Generator:
    """Create a numpy generator; None gives a fixed default stream."""
    return np.random.default_rng(0 if seed is None else seed)


def derive_seed(seed: int, *labels: Any) -> int:
    """
    Derive an independent child seed from a parent seed and labels.

    The derivation is a hash, so the child seed depends only on the
    parent seed and the labels, never on call order.

    Args:
        seed: Parent seed
        *labels: Values identifying the child stream (e.g. 'sweep', 3, 'cnn')

    Returns:
        Non-negative 63-bit integer seed
    """
    payload = json.dumps([seed, *[str(label) for label in labels]])
    digest = hashlib.sha256(payload.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') >> 1


def month_index(time_index: str) -> int:
    """
    Convert a YYYY-MM time index to a month count.

    Args:
        time_index: Month string such as '2021-06'

    Returns:
        year * 12 + month - 1
    """
    try:
        year, month = time_index.split('-')
        year_i, month_i = int(year), int(month)
    except (ValueError, AttributeError):
        raise ValueError(f"Invalid time index: {time_index!r}. Use YYYY-MM")
    if not 1 <= month_i <= 12:
        raise ValueError(f"Invalid month in time index: {time_index!r}")
    return year_i * 12 + month_i - 1


def month_string(index: int) -> str:
    """Inverse of month_index."""
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def stable_hash(payload: Any) -> str:
    """
    SHA-256 of the canonical JSON encoding of a payload.

    Args:
        payload: JSON-serializable object

    Returns:
        Hex digest
    """
    encoded = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()


def write_csv(df: pd.DataFrame, path: str) -> None:
    """Write a frame with the fixed float format every artifact uses."""
    df.to_csv(path, index=False, float_format='%.10g', lineterminator='\n')
