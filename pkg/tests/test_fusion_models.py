"""
Unit tests for the fusion architectures.
Covers the structure of all sixteen (group, base) models and their forward pass.
"""

import unittest
from unittest.mock import patch
import numpy as np
from pydantic import ValidationError

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

import fusion_models
import tensor as T
from fusion_models import BASES, GROUPS, BuildError, FusionConfig, build_model, build_network_a, build_network_b
from gradcheck import random_batch, small_model_config
from tensor import ShapeError


class TestFusionStructure(unittest.TestCase):
    """Test cases for model structure."""

    def test_all_architectures_forward(self):
        """Test logits shape and a finite backward pass for every pair."""
        rng = np.random.default_rng(0)
        for group in GROUPS:
            for base in BASES:
                config = small_model_config(group, base)
                model = build_model(config)
                batch = random_batch(config, 3, rng)
                logits = model(batch)
                self.assertEqual(logits.shape, (3, 8), f"{group}/{base}")

                T.backward(T.cross_entropy_loss(model(batch, training=True, rng=rng), batch.labels - 1))
                for name, p in model.named_parameters().items():
                    self.assertTrue(np.all(np.isfinite(p.grad)), f"{group}/{base} {name}")

    def test_literal_form_warns_on_length_mismatch(self):
        """Test that a literal cross-attention form that cannot apply is reported at build time."""
        with self.assertLogs("credit_fusion.fusion_models", level="WARNING") as logs:
            build_model(small_model_config(4, "cnn", cross_attention_form="paper_literal"))
        self.assertTrue(any("standard form will be used" in line for line in logs.output))

        with patch.object(fusion_models.logger, 'warning') as warned:
            build_model(small_model_config(4, "cnn"))
            build_model(small_model_config(3, "cnn", cross_attention_form="paper_literal"))
        warned.assert_not_called()

    def test_network_a_counts(self):
        """Test per-channel streams in groups 1 and 2 and one fused stream in groups 3 and 4."""
        for group, expected in ((1, 4), (2, 4), (3, 1), (4, 1)):
            model = build_model(small_model_config(group, "cnn"))
            self.assertEqual(len(model.network_a), expected)

    def test_cross_attention_counts(self):
        """Test exactly one cross-attention module in groups 2 and 4."""
        for group in GROUPS:
            model = build_model(small_model_config(group, "lstm"))
            self.assertEqual(model.count_modules("CrossATT"), 1 if group in (2, 4) else 0)
            self.assertEqual(model.fusion, "cross_attention" if group in (2, 4) else "concat")

    def test_per_channel_streams_share_shapes(self):
        """Test that each group 1 stream has as many parameters as the group 3 stream."""
        for base in BASES:
            per_channel = build_model(small_model_config(1, base))
            fused = build_model(small_model_config(3, base))
            fused_count = fused.network_a["numeric"].parameter_count()
            stream_counts = [stack.parameter_count() for stack in per_channel.network_a.values()]
            self.assertEqual(stream_counts, [fused_count] * 4, base)

    def test_stage_sequences(self):
        """Test the stage kinds of each base."""
        config = small_model_config(3, "cnn")
        self.assertEqual(build_network_a("cnn", 1, config, 155).describe(),
                         ["Conv", "MaxP", "Conv", "GlobAve"])
        self.assertEqual(build_network_a("gru", 1, config, 155).describe(),
                         ["Conv", "MaxP", "GRU", "GlobAve"])
        self.assertEqual(build_network_a("att", 1, config, 155).describe(),
                         ["Conv", "Drop", "ATT", "GlobAve"])
        self.assertEqual(build_network_b("cnn", 20, config).describe(),
                         ["Conv", "Drop", "Conv", "MaxP", "Conv", "GlobAve"])
        self.assertEqual(build_network_b("lstm", 20, config).describe(),
                         ["Conv", "Drop", "Conv", "MaxP", "LSTM", "GlobAve"])
        self.assertEqual(build_network_b("att", 20, config).describe(), ["BERT"])

    def test_parameter_count_is_deterministic(self):
        """Test that the same config builds identical parameters."""
        config = small_model_config(2, "att", init_seed=7)
        first, second = build_model(config), build_model(config)
        self.assertEqual(first.parameter_count(), second.parameter_count())
        for (name, a), b in zip(first.named_parameters().items(), second.parameters()):
            np.testing.assert_array_equal(a.data, b.data, name)


class TestFusionChannels(unittest.TestCase):
    """Test cases for channel subsets."""

    def test_text_only_group_two_concatenates(self):
        """Test the single-modality fallback of a cross-attention group."""
        model = build_model(small_model_config(2, "cnn", channels=["text"]))
        self.assertEqual(model.network_a, {})
        self.assertEqual(model.fusion, "concat")
        self.assertEqual(model.count_modules("CrossATT"), 0)

    def test_numeric_subset_has_no_text_stream(self):
        """Test a numeric-only model."""
        config = small_model_config(1, "gru", channels=["bond", "market"])
        model = build_model(config)
        self.assertIsNone(model.network_b)
        self.assertEqual(sorted(model.network_a), ["bond", "market"])
        self.assertEqual(model(random_batch(config, 2, np.random.default_rng(1))).shape, (2, 8))

    def test_channel_validation(self):
        """Test unknown, duplicate and empty channel lists."""
        for channels in (["bond", "news"], ["bond", "bond"], []):
            with self.assertRaises(ValidationError):
                FusionConfig(channels=channels)

    def test_channels_are_canonically_ordered(self):
        """Test that channel order is normalized."""
        self.assertEqual(FusionConfig(channels=["text", "bond"]).channels, ["bond", "text"])

    def test_kernel_longer_than_channel(self):
        """Test that a kernel wider than the covariate channel cannot be built."""
        with self.assertRaises(BuildError):
            build_model(small_model_config(1, "cnn", kernel_size=5))

    def test_unknown_config_key(self):
        """Test that FusionConfig rejects unknown keys."""
        with self.assertRaises(ValidationError):
            FusionConfig(layers=3)


class TestFusionForward(unittest.TestCase):
    """Test cases for the forward pass."""

    def setUp(self):
        """Set up a small model and batch."""
        self.config = small_model_config(4, "cnn")
        self.model = build_model(self.config)
        self.batch = random_batch(self.config, 3, np.random.default_rng(2))

    def test_rows_are_independent(self):
        """Test that each row's logits do not depend on the other rows."""
        logits = self.model(self.batch).data
        for row in range(3):
            single = random_batch(self.config, 1, np.random.default_rng(0))
            for name in ("bond", "ratios", "market", "covariate", "tokens"):
                setattr(single, name, getattr(self.batch, name)[row:row + 1])
            np.testing.assert_allclose(self.model(single).data[0], logits[row], atol=1e-10)

    def test_inference_is_deterministic(self):
        """Test that evaluation mode ignores dropout."""
        np.testing.assert_array_equal(self.model(self.batch).data, self.model(self.batch).data)

    def test_zero_text_changes_logits(self):
        """Test that zeroing the text stream reaches the head."""
        self.assertFalse(np.allclose(self.model(self.batch).data,
                                     self.model(self.batch, zero_text=True).data))

    def test_zero_text_acts_through_text_head_rows(self):
        """Test that in concatenation groups the text stream reaches the logits only through its head rows."""
        for group in (1, 3):
            for base in BASES:
                config = small_model_config(group, base)
                model = build_model(config)
                batch = random_batch(config, 3, np.random.default_rng(4))
                text_rows = model.text_slice()
                self.assertEqual(text_rows.stop, model.fused_width, f"{group}/{base}")
                self.assertFalse(np.array_equal(model(batch).data, model(batch, zero_text=True).data))

                model.head_hidden.weights.data[text_rows, :] = 0.0
                np.testing.assert_array_equal(model(batch).data, model(batch, zero_text=True).data,
                                              err_msg=f"{group}/{base}")

    def test_text_slice_absent_under_cross_attention(self):
        """Test that cross-attention groups have no text coordinates in the fusion vector."""
        self.assertIsNone(build_model(small_model_config(4, "gru")).text_slice())
        self.assertIsNone(build_model(small_model_config(3, "cnn", channels=["bond"])).text_slice())

    def test_wrong_channel_width(self):
        """Test that a mis-shaped channel is named in the error."""
        self.batch.ratios = self.batch.ratios[:, :40]
        with self.assertRaises(ShapeError) as ctx:
            self.model(self.batch)
        self.assertIn("ratios", str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
