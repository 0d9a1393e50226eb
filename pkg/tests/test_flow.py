"""
Unit tests for rectified-flow paths and the Euler sampler
"""

import unittest
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from models.flow import euler_integrate, euler_sample, flow_point, make_flow_point
from models.layout import ImageSlot, Role, SequenceLayout
from utils.config import SamplerConfig
from utils.errors import RejectedInputError, SamplerDivergenceError
from utils.seeding import derive_rng


class TestFlowPoints(unittest.TestCase):
    """Test path construction"""

    def setUp(self):
        self.z1 = np.array([1.0, -2.0, 0.5])

    def test_path_invariants(self):
        point = make_flow_point(self.z1, derive_rng(0))
        self.assertGreaterEqual(point.t, 0.0)
        self.assertLess(point.t, 1.0)
        np.testing.assert_allclose(point.z_t, (1 - point.t) * point.z0 + point.t * self.z1)
        np.testing.assert_allclose(point.u_star, self.z1 - point.z0)
        np.testing.assert_allclose(point.z0 + point.t * point.u_star, point.z_t)

    def test_path_invariants_on_many_triples(self):
        for i in range(1000):
            rng = derive_rng(5, 'triple', i)
            z1 = rng.standard_normal(8) * rng.uniform(0.1, 10.0)
            point = make_flow_point(z1, rng)
            self.assertTrue(0.0 <= point.t < 1.0)
            np.testing.assert_allclose(point.u_star, z1 - point.z0, rtol=0, atol=1e-12)
            np.testing.assert_allclose(point.z_t, (1 - point.t) * point.z0 + point.t * z1, rtol=0, atol=1e-12)
            np.testing.assert_allclose(flow_point(point.z0, z1, 0.0).z_t, point.z0, rtol=0, atol=1e-12)
            np.testing.assert_allclose(flow_point(point.z0, z1, 1.0).z_t, z1, rtol=0, atol=1e-12)

    def test_endpoints(self):
        z0 = np.zeros(3)
        np.testing.assert_array_equal(flow_point(z0, self.z1, 0.0).z_t, z0)
        np.testing.assert_array_equal(flow_point(z0, self.z1, 1.0).z_t, self.z1)

    def test_same_rng_same_point(self):
        a = make_flow_point(self.z1, derive_rng(3, 'step', 1))
        b = make_flow_point(self.z1, derive_rng(3, 'step', 1))
        np.testing.assert_array_equal(a.z0, b.z0)
        self.assertEqual(a.t, b.t)

    def test_non_finite_target_rejected(self):
        with self.assertRaises(RejectedInputError):
            make_flow_point(np.array([np.inf, 0.0, 0.0]), derive_rng(0))


class TestEuler(unittest.TestCase):
    """Test the Euler integrator"""

    def setUp(self):
        self.target = np.array([2.0, -1.0, 0.25, 4.0])

    def test_constant_field(self):
        z = euler_integrate(lambda z, t: np.ones_like(z), np.zeros(4), 8)
        np.testing.assert_allclose(z, np.ones(4))

    def test_straight_field_reaches_target(self):
        """The exact field of a straight path lands on its endpoint for any step count"""
        for steps in (1, 3, 16):
            z = euler_integrate(lambda z, t: (self.target - z) / (1.0 - t), np.zeros(4), steps)
            np.testing.assert_allclose(z, self.target, atol=1e-9)

    def test_zero_steps_rejected(self):
        with self.assertRaises(RejectedInputError):
            euler_integrate(lambda z, t: z, np.zeros(4), 0)

    def test_divergence_reports_step_and_stage(self):
        def field(z, t):
            return np.full_like(z, np.inf) if t >= 0.5 else np.zeros_like(z)

        with self.assertRaises(SamplerDivergenceError) as ctx:
            euler_integrate(field, np.zeros(4), 4, stage='I1')
        self.assertEqual(ctx.exception.step, 2)
        self.assertEqual(ctx.exception.stage, 'I1')

    def test_sampler_needs_trailing_image(self):
        layout = SequenceLayout().add_text([1, 2], Role.CONTEXT)
        with self.assertRaises(RejectedInputError):
            euler_sample(None, layout, SamplerConfig(steps=2), derive_rng(0))

    def test_sampler_fills_slot(self):
        """A stub model whose velocity always points at a fixed latent"""
        target = self.target

        class Stub:
            training = False

            def __call__(self, layout):
                image = layout.images[-1]
                return None, _Tensorish((target - image.latent) / (1.0 - image.t))

            def eval(self):
                return self

            def train(self, mode=True):
                return self

        layout = SequenceLayout().add_text([1], Role.CONTEXT)
        layout.add_image(ImageSlot(np.zeros(4), 0.0, Role.DRAFT))
        z = euler_sample(Stub(), layout, SamplerConfig(steps=5), derive_rng(0), stage='I1')
        np.testing.assert_allclose(z, target, atol=1e-9)
        np.testing.assert_allclose(layout.images[-1].latent, target, atol=1e-9)
        self.assertEqual(layout.images[-1].t, 1.0)


class _Tensorish:
    """Indexable wrapper mimicking the tensor chain euler_sample calls"""

    def __init__(self, row):
        self.row = np.asarray(row)

    def __getitem__(self, _):
        return self

    def detach(self):
        return self

    def cpu(self):
        return self

    def double(self):
        return self

    def numpy(self):
        return self.row


if __name__ == '__main__':
    unittest.main()
