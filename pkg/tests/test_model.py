"""
Unit tests for sequence layouts, the two-expert transformer and the losses
"""

import unittest
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import torch

from models.layout import IGNORE_INDEX, ImageSlot, Role, SequenceLayout, concat_layouts
from models.losses import image_loss, text_loss, total_loss
from models.transformer import TwoExpertTransformer, param_partition
from utils.config import ModelConfig
from utils.errors import ConfigurationError, ContextOverflowError

TINY = dict(vocab_size=16, d_model=8, n_layers=2, n_heads=2, ffn_mult=2, latent_dim=4,
            slots_per_image=2, max_positions=32)


def _sample(tokens_before, tokens_after, latent, target=None, t=0.3):
    layout = SequenceLayout().add_text(tokens_before, Role.CONTEXT)
    role = Role.SUPERVISED if target is not None else Role.CONTEXT
    layout.add_image(ImageSlot(latent, t, role, target), slots=2)
    layout.add_text(tokens_after, Role.SUPERVISED)
    return layout


class TestLayout(unittest.TestCase):
    """Test layout bookkeeping"""

    def setUp(self):
        self.layout = SequenceLayout().add_text([1, 2], Role.CONTEXT).add_text([3, 4], Role.SUPERVISED)

    def test_next_token_targets(self):
        self.assertEqual(self.layout.text_targets, [2, 3, 4, IGNORE_INDEX])
        # 1->2 predicts a context token; 2->3 and 3->4 are supervised
        self.assertEqual(self.layout.text_mask(), [False, True, True, False])
        self.assertEqual(self.layout.supervised_text_count(), 2)

    def test_images_break_text_targets(self):
        layout = _sample([1, 2], [3], np.zeros(4))
        self.assertEqual(layout.text_targets[1], IGNORE_INDEX)
        self.assertEqual(len(layout), 5)

    def test_packing_keeps_samples_apart(self):
        packed = concat_layouts([self.layout, _sample([5], [6, 7], np.zeros(4))])
        self.assertEqual(packed.segment_ids, [0] * 4 + [1] * 5)
        self.assertEqual(packed.position_ids[4], 0)
        mask = packed.attention_mask()
        self.assertFalse(bool(mask[5, 2]))
        self.assertTrue(bool(mask[5, 4]))
        # slots of one image see each other
        self.assertTrue(bool(mask[5, 6]))
        self.assertFalse(bool(mask[4, 5]))
        packed.validate()


class TestTransformer(unittest.TestCase):
    """Test the two-expert model"""

    def setUp(self):
        torch.manual_seed(0)
        self.cfg = ModelConfig(**TINY)
        self.model = TwoExpertTransformer(self.cfg, 12).double()
        rng = np.random.default_rng(0)
        self.a = _sample([1, 2, 3], [4, 5], rng.standard_normal(4), rng.standard_normal(4))
        self.b = _sample([6], [7, 8, 9], rng.standard_normal(4), rng.standard_normal(4), t=0.8)

    def test_output_shapes(self):
        logits, velocity = self.model(self.a)
        self.assertEqual(tuple(logits.shape), (5, 12))
        self.assertEqual(tuple(velocity.shape), (1, 4))

    def test_partition_is_exhaustive(self):
        und, gen, shared = param_partition(self.model)
        names = [name for name, _ in self.model.named_parameters()]
        self.assertEqual(sorted(und + gen + shared), sorted(names))
        self.assertFalse(set(und) & set(gen) or set(und) & set(shared) or set(gen) & set(shared))
        self.assertIn('text_head.weight', und)
        self.assertIn('velocity_head.weight', gen)
        self.assertIn('tok_emb.weight', shared)
        self.assertTrue(any('.experts.und.' in n for n in und))
        self.assertTrue(any('.experts.gen.' in n for n in gen))

    def test_packed_outputs_match_single(self):
        """Packing never lets one sample see another"""
        logits_a, velocity_a = self.model(self.a)
        logits_b, velocity_b = self.model(self.b)
        logits, velocity = self.model(concat_layouts([self.a.copy(), self.b.copy()]))
        torch.testing.assert_close(logits[:5], logits_a, atol=1e-10, rtol=1e-9)
        torch.testing.assert_close(logits[5:], logits_b, atol=1e-10, rtol=1e-9)
        torch.testing.assert_close(velocity, torch.cat([velocity_a, velocity_b]), atol=1e-10, rtol=1e-9)

    def test_causal_text(self):
        changed = _sample([1, 2, 3], [4, 11], self.a.images[0].latent, self.a.images[0].target)
        before, _ = self.model(self.a)
        after, _ = self.model(changed)
        torch.testing.assert_close(before[:4], after[:4])

    def test_vocab_must_fit(self):
        with self.assertRaises(ConfigurationError):
            TwoExpertTransformer(self.cfg, 17)

    def test_context_overflow(self):
        long = SequenceLayout().add_text(list(range(1, 12)) * 3, Role.CONTEXT)
        with self.assertRaises(ContextOverflowError):
            self.model(long)

    def test_gradient_matches_finite_differences(self):
        """Autograd gradients of the total loss agree with central differences in float64"""
        layout = concat_layouts([self.a, self.b])

        def loss():
            logits, velocity = self.model(layout)
            l_text, _ = text_loss(logits, layout)
            l_img, _ = image_loss(velocity, layout.velocity_targets(), layout)
            return total_loss(l_text, l_img)

        self.model.zero_grad()
        loss().backward()
        eps = 1e-6
        checks = [('tok_emb.weight', (4, 1)), ('text_head.weight', (5, 0)), ('velocity_head.weight', (1, 3)),
                  ('blocks.0.experts.gen.qkv.weight', (2, 2)), ('blocks.1.experts.und.ffn.0.weight', (3, 1))]
        params = dict(self.model.named_parameters())
        for name, index in checks:
            param = params[name]
            analytic = float(param.grad[index])
            with torch.no_grad():
                original = float(param[index])
                param[index] = original + eps
                up = float(loss())
                param[index] = original - eps
                down = float(loss())
                param[index] = original
            numeric = (up - down) / (2 * eps)
            self.assertAlmostEqual(analytic, numeric, delta=1e-6 + 1e-4 * abs(numeric), msg=name)

    def test_gradient_check_on_random_parameters(self):
        layout = concat_layouts([self.a, self.b])

        def loss():
            logits, velocity = self.model(layout)
            l_text, _ = text_loss(logits, layout)
            l_img, _ = image_loss(velocity, layout.velocity_targets(), layout)
            return total_loss(l_text, l_img)

        self.model.zero_grad()
        loss().backward()
        params = list(self.model.named_parameters())
        self.assertLess(sum(p.numel() for _, p in params), 50_000)
        sizes = np.cumsum([p.numel() for _, p in params])
        picks = np.random.default_rng(7).choice(int(sizes[-1]), size=200, replace=False)
        eps = 1e-6
        for flat in picks:
            which = int(np.searchsorted(sizes, flat, side='right'))
            name, param = params[which]
            offset = int(flat - (sizes[which - 1] if which else 0))
            index = np.unravel_index(offset, tuple(param.shape))
            analytic = float(param.grad[index])
            with torch.no_grad():
                original = float(param[index])
                param[index] = original + eps
                up = float(loss())
                param[index] = original - eps
                down = float(loss())
                param[index] = original
            numeric = (up - down) / (2 * eps)
            self.assertAlmostEqual(analytic, numeric, delta=1e-6 + 1e-4 * abs(numeric), msg=f"{name}{index}")

    def test_text_logits_ignore_the_generation_expert(self):
        text_only = SequenceLayout().add_text([1, 2, 3], Role.CONTEXT).add_text([4, 5, 6], Role.SUPERVISED)
        logits, _ = self.model(text_only)
        prefix, _ = self.model(self.a)
        _, gen, _ = param_partition(self.model)
        params = dict(self.model.named_parameters())
        with torch.no_grad():
            for name in gen:
                params[name].zero_()
            zeroed, _ = self.model(text_only)
            zeroed_prefix, _ = self.model(self.a)
        self.assertTrue(torch.equal(logits, zeroed))
        # text before the first image never attends to it
        self.assertTrue(torch.equal(prefix[:3], zeroed_prefix[:3]))


class TestLosses(unittest.TestCase):
    """Test masked objectives"""

    def setUp(self):
        self.layout = _sample([1, 2], [3, 4], np.zeros(4), np.ones(4))

    def test_text_loss_counts_supervised_positions(self):
        logits = torch.zeros(4, 6)
        loss, count = text_loss(logits, self.layout)
        # only 3 -> 4 is supervised
        self.assertEqual(count, 1)
        self.assertAlmostEqual(float(loss), float(np.log(6)), places=6)

    def test_unsupervised_targets_cannot_leak(self):
        context_only = _sample([1, 2], [], np.zeros(4))
        logits = torch.randn(2, 6)
        loss, count = text_loss(logits, context_only)
        self.assertEqual(count, 0)
        self.assertEqual(float(loss), 0.0)
        u = torch.randn(1, 4)
        loss, count = image_loss(u, torch.full((1, 4), 1e6), context_only)
        self.assertEqual(count, 0)
        self.assertEqual(float(loss), 0.0)

    def test_image_loss_is_mean_squared_error(self):
        u = torch.zeros(1, 4, dtype=torch.float64)
        loss, count = image_loss(u, self.layout.velocity_targets(), self.layout)
        self.assertEqual(count, 1)
        self.assertAlmostEqual(float(loss), 1.0)

    def test_total_loss_weights(self):
        self.assertEqual(total_loss(1.0, 3.0), 5.0)
        self.assertEqual(total_loss(1.0, 3.0, 0.5, 0.0), 0.5)


if __name__ == '__main__':
    unittest.main()
