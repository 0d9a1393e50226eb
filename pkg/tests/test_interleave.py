"""
Unit tests for interleaved inference on a small untrained model
"""

import unittest
import tempfile
import sys
import os
from pathlib import Path

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from PIL import Image

from inference.interleave import InferenceMode, InterleaveEngine, grid_png
from models.codec import fit_codec
from toyworld.instructions import sample_instruction
from toyworld.rules import load_rule_table
from toyworld.scenes import random_grid
from toyworld.vocab import build_vocabulary
from training.trainer import build_model
from utils.config import ModelConfig, SamplerConfig, WorldConfig
from utils.errors import ContextOverflowError, RejectedInputError
from utils.seeding import derive_rng

WORLD = WorldConfig(grid_h=8, grid_w=8)
SMALL = ModelConfig(d_model=16, n_layers=1, n_heads=2, ffn_mult=2, latent_dim=8, max_positions=128)


class TestInterleaveEngine(unittest.TestCase):
    """Test rollout shapes and bookkeeping"""

    @classmethod
    def setUpClass(cls):
        cls.rules = load_rule_table()
        cls.vocab = build_vocabulary(WORLD, cls.rules, SMALL.vocab_size)
        cls.codec = fit_codec([random_grid(derive_rng(0, 'fit', i), WORLD, density=0.3) for i in range(40)],
                              SMALL.latent_dim)
        cls.text = sample_instruction('cultural', derive_rng(0, 'prompt'), WORLD, cls.rules).text
        cls.source = random_grid(derive_rng(1), WORLD, density=0.2)

    def setUp(self):
        self.model = build_model(SMALL, self.vocab, seed=0)
        self.engine = InterleaveEngine(self.model, self.codec, self.vocab, SamplerConfig(steps=3),
                                       max_segment_tokens=4)

    def test_direct_mode(self):
        rollout = self.engine.run(self.text, 'direct', rng=derive_rng(2))
        self.assertEqual(rollout.t1, '')
        self.assertIsNone(rollout.t2)
        self.assertIsNone(rollout.i2)
        self.assertEqual(rollout.metadata['image_stages'], ['I1'])
        self.assertEqual((rollout.i1.grid_h, rollout.i1.grid_w), (8, 8))
        self.assertIs(rollout.final_image, rollout.i1)

    def test_reason_mode(self):
        rollout = self.engine.run(self.text, InferenceMode.REASON, rng=derive_rng(2))
        self.assertIsInstance(rollout.t1, str)
        self.assertLessEqual(len(rollout.t1.split()), 4)
        self.assertIn('T1', rollout.metadata['truncated'])
        self.assertIsNone(rollout.i2)

    def test_reason_refine_mode(self):
        rollout = self.engine.run(self.text, 'reason_refine', rng=derive_rng(2))
        self.assertIsNotNone(rollout.t2)
        self.assertIsNotNone(rollout.i2)
        self.assertIs(rollout.final_image, rollout.i2)
        self.assertEqual(rollout.metadata['image_stages'], ['I1', 'I2'])
        self.assertEqual(rollout.metadata['flow_steps'], 3)

    def test_same_seed_same_rollout(self):
        first = self.engine.run(self.text, 'reason_refine', rng=derive_rng(5))
        second = self.engine.run(self.text, 'reason_refine', rng=derive_rng(5))
        self.assertEqual(first.to_dict(), second.to_dict())
        # without an rng the sampler seed and the text decide
        self.assertEqual(self.engine.run(self.text, 'direct').to_dict(), self.engine.run(self.text, 'direct').to_dict())

    def test_segment_cap_sets_truncation_flag(self):
        engine = InterleaveEngine(self.model, self.codec, self.vocab, SamplerConfig(steps=2), max_segment_tokens=0)
        rollout = engine.run(self.text, 'reason_refine', rng=derive_rng(3))
        self.assertEqual(rollout.t1, '')
        self.assertEqual(rollout.metadata['truncated'], {'T1': True, 'T2': True})

    def test_edit_puts_source_in_context(self):
        plain = self.engine.run(self.text, 'direct', rng=derive_rng(4))
        edited = self.engine.edit(self.source, self.text, 'direct', rng=derive_rng(4))
        self.assertEqual(edited.source, self.source)
        self.assertEqual(edited.metadata['positions'] - plain.metadata['positions'], SMALL.slots_per_image)
        with self.assertRaises(RejectedInputError):
            self.engine.edit(None, self.text)

    def test_training_flag_restored(self):
        self.model.train()
        self.engine.run(self.text, 'direct', rng=derive_rng(0))
        self.assertTrue(self.model.training)

    def test_bad_inputs(self):
        with self.assertRaises(RejectedInputError):
            self.engine.run(self.text, 'imagine')
        with self.assertRaises(RejectedInputError):
            InterleaveEngine(self.model, fit_codec([self.source] * 3, 2), self.vocab)

    def test_context_overflow(self):
        cramped = build_model(ModelConfig(d_model=16, n_layers=1, n_heads=2, ffn_mult=2, latent_dim=8,
                                          max_positions=8), self.vocab)
        engine = InterleaveEngine(cramped, self.codec, self.vocab)
        with self.assertRaises(ContextOverflowError):
            engine.run(self.text, 'direct')

    def test_ascii_and_png(self):
        rollout = self.engine.edit(self.source, self.text, 'reason_refine', rng=derive_rng(6))
        text = rollout.to_ascii()
        for label in ('C: ', 'SRC:', 'I1:', 'T2: ', 'I2:'):
            self.assertIn(label, text)
        with tempfile.TemporaryDirectory() as tmp:
            path = rollout.save_png(Path(tmp) / 'rollout.png', cell=10)
            with Image.open(path) as png:
                self.assertEqual(png.size, (3 * 80 + 2 * 5, 80))

    def test_grid_png_size(self):
        self.assertEqual(grid_png(self.source, cell=6).size, (48, 48))


if __name__ == '__main__':
    unittest.main()
