"""
Unit tests for settings and the shipped configuration files.
"""

import unittest
from unittest.mock import patch
from pydantic import ValidationError

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from config import Settings, get_all_presets, get_preset, load_stopwords
from evaluation import EvaluationConfig
from fusion_models import FusionConfig
from trainer import TrainConfig


class TestSettings(unittest.TestCase):
    """Test cases for environment settings."""

    def test_defaults(self):
        """Test the default values."""
        with patch.dict(os.environ, {}, clear=True):
            settings = Settings(_env_file=None)
        self.assertEqual(settings.log_level, "INFO")
        self.assertEqual(settings.bootstrap_resamples, 10000)
        self.assertAlmostEqual(settings.confidence_level, 0.90)
        self.assertEqual(settings.period_cut, "2020-03")

    def test_environment_override(self):
        """Test the CREDIT_FUSION_ prefix."""
        with patch.dict(os.environ, {'CREDIT_FUSION_DEFAULT_SEED': '7', 'CREDIT_FUSION_LOG_LEVEL': 'debug'}):
            settings = Settings(_env_file=None)
        self.assertEqual(settings.default_seed, 7)
        self.assertEqual(settings.log_level, "DEBUG")

    def test_validators(self):
        """Test invalid values."""
        for field, value in (('log_level', 'verbose'), ('confidence_level', 1.0),
                             ('bootstrap_resamples', 50), ('period_cut', '2020/03')):
            with self.assertRaises(ValidationError, msg=field):
                Settings(_env_file=None, **{field: value})

    def test_settings_feed_config_defaults(self):
        """Test that evaluation defaults follow the global settings."""
        with patch('evaluation.settings', Settings(_env_file=None, bootstrap_resamples=500, period_cut="2019-01")):
            config = EvaluationConfig()
        self.assertEqual(config.resamples, 500)
        self.assertEqual(config.period_cut, "2019-01")


class TestPresets(unittest.TestCase):
    """Test cases for model presets."""

    def test_default_preset(self):
        """Test that no name selects the full preset."""
        preset = get_preset()
        self.assertEqual(preset['name'], "full")
        self.assertEqual(preset['filters'], 64)
        self.assertEqual(preset['epochs'], 100)
        self.assertAlmostEqual(preset['learning_rate'], 1e-4)

    def test_unknown_preset(self):
        """Test that an unknown name raises."""
        with self.assertRaises(ValueError):
            get_preset("huge")

    def test_presets_are_valid_configs(self):
        """Test that every preset key belongs to FusionConfig or TrainConfig."""
        known = set(FusionConfig.model_fields) | set(TrainConfig.model_fields) | {'description'}
        for name, preset in get_all_presets().items():
            self.assertEqual(set(preset) - known, set(), name)

    def test_stopwords(self):
        """Test the shipped stop-word list."""
        words = load_stopwords()
        self.assertIn("the", words)
        self.assertTrue(all(w == w.lower() for w in words))


if __name__ == '__main__':
    unittest.main()
