"""
Configuration module for the credit fusion framework.
Loads settings from environment variables with validation and reads
the shipped JSON configuration files (model presets, rating table).
"""

import os
import json
from typing import Dict, Any, List
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator

SOFTWARE_VERSION = "0.3.0"

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))

# Load environment variables from .env file (only if it exists)
if os.path.exists('.env'):
    load_dotenv()


class Settings(BaseSettings):
    """Application settings with validation."""

    model_config = SettingsConfigDict(
        env_prefix="CREDIT_FUSION_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
        protected_namespaces=(),
    )

    # Logging Configuration
    log_level: str = "INFO"

    # Output Configuration
    output_dir: str = "results"
    default_seed: int = 42

    # Evaluation Configuration
    bootstrap_resamples: int = 10000
    confidence_level: float = 0.90
    period_cut: str = "2020-03"

    # Text Configuration
    max_text_length: int = 512
    vocab_max_size: int = 20000

    model_config_path: str = os.path.join(CONFIG_DIR, "model_config.json")
    rating_config_path: str = os.path.join(CONFIG_DIR, "rating_config.json")
    stopwords_path: str = os.path.join(CONFIG_DIR, "stopwords.txt")

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v):
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if v.upper() not in valid_levels:
            raise ValueError(f'Log level must be one of: {valid_levels}')
        return v.upper()

    @field_validator('confidence_level')
    @classmethod
    def validate_confidence_level(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError('Confidence level must lie strictly between 0 and 1')
        return v

    @field_validator('bootstrap_resamples')
    @classmethod
    def validate_resamples(cls, v):
        if v < 100:
            raise ValueError('At least 100 bootstrap resamples are required')
        return v

    @field_validator('period_cut')
    @classmethod
    def validate_period_cut(cls, v):
        if len(v) != 7 or v[4] != '-' or not (v[:4] + v[5:]).isdigit():
            raise ValueError(f'Period cut must be formatted YYYY-MM, got {v!r}')
        return v


def _load_json(path: str, description: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"{description} file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in {description.lower()}: {e}")


def load_model_config() -> Dict[str, Any]:
    """
    Load model hyperparameter presets from JSON file.

    Returns:
        Dictionary with model presets
    """
    return _load_json(settings.model_config_path, "Model configuration")


def get_preset(name: str = None) -> Dict[str, Any]:
    """
    Get the hyperparameters of a named preset.

    Args:
        name: Preset name (e.g., 'full'). If None, uses default.

    Returns:
        Dictionary of FusionConfig/TrainConfig overrides
    """
    config = load_model_config()

    if name is None:
        name = config.get('default_preset', 'full')

    preset = config['presets'].get(name)
    if preset is None:
        raise ValueError(f"Preset '{name}' not found in model configuration")

    return {'name': name, **preset}


def get_all_presets() -> Dict[str, Dict[str, Any]]:
    """Get all available presets."""
    return load_model_config()['presets']


def load_rating_config() -> Dict[str, Any]:
    """
    Load the rating conversion table from JSON file.

    Returns:
        Dictionary with agencies and rating rows
    """
    return _load_json(settings.rating_config_path, "Rating configuration")


def load_stopwords() -> List[str]:
    """
    Load the shipped English stop-word list.

    Returns:
        List of lowercase stop words
    """
    path = settings.stopwords_path
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return [line.strip() for line in f if line.strip() and not line.startswith('#')]
    except FileNotFoundError:
        raise FileNotFoundError(f"Stop-word file not found: {path}")


# Global settings instance
settings = Settings()
