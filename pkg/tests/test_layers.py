import unittest

import numpy as np
from numpy.testing import assert_allclose

from tpsgta import layers
from tpsgta.layers import BatchNorm1d, Conv1d, Dense, LayerNorm, Module, Parameter


class Pair(Module):
    def __init__(self, rng):
        self.first = Dense(3, 2, rng)
        self.blocks = [Conv1d(2, 2, 3, rng), BatchNorm1d(2)]
        self.scale = Parameter(np.ones(1))
        self._hidden = Parameter(np.zeros(1))

    def forward(self, x):
        return x


class RegistryTestCase(unittest.TestCase):
    def setUp(self):
        self.module = Pair(np.random.default_rng(0))

    def test_names_follow_assignment_order(self):
        names = [name for name, _ in self.module.named_parameters()]
        self.assertEqual(
            names,
            [
                "first.weight",
                "first.bias",
                "blocks.0.weight",
                "blocks.0.bias",
                "blocks.1.gamma",
                "blocks.1.beta",
                "scale",
            ],
        )
        self.assertEqual(len(names), len(set(names)))

    def test_parameters_carry_their_names(self):
        for name, param in self.module.named_parameters():
            self.assertEqual(param.name, name)

    def test_enumeration_is_deterministic(self):
        again = Pair(np.random.default_rng(0))
        for (n1, p1), (n2, p2) in zip(self.module.named_parameters(), again.named_parameters()):
            self.assertEqual(n1, n2)
            assert_allclose(p1.data, p2.data)

    def test_buffers_and_state_dict(self):
        buffers = dict(self.module.named_buffers())
        self.assertEqual(set(buffers), {"blocks.1.running_mean", "blocks.1.running_var"})
        state = self.module.state_dict()
        self.assertIn("buffer:blocks.1.running_var", state)
        self.assertIn("first.weight", state)

    def test_train_and_eval_propagate(self):
        self.module.eval()
        self.assertFalse(any(m.training for m in self.module.modules()))
        self.module.train()
        self.assertTrue(all(m.training for m in self.module.modules()))

    def test_zero_grad(self):
        for p in self.module.parameters():
            p.grad = np.ones_like(p.data)
        self.module.zero_grad()
        self.assertTrue(all(p.grad is None for p in self.module.parameters()))


class InitializationTestCase(unittest.TestCase):
    def test_glorot_bounds(self):
        weights = layers.glorot_uniform(np.random.default_rng(1), (50, 40), 40, 50)
        limit = np.sqrt(6.0 / 90.0)
        self.assertTrue(np.all(np.abs(weights) <= limit))
        self.assertGreater(np.abs(weights).max(), 0.9 * limit)

    def test_biases_and_norms(self):
        rng = np.random.default_rng(2)
        assert_allclose(Dense(4, 3, rng).bias.data, np.zeros(3))
        assert_allclose(Conv1d(2, 3, 5, rng).bias.data, np.zeros(3))
        bn = BatchNorm1d(3)
        assert_allclose(bn.gamma.data, np.ones(3))
        assert_allclose(bn.beta.data, np.zeros(3))

    def test_conv_fan_uses_kernel_extent(self):
        conv = Conv1d(2, 4, 5, np.random.default_rng(3))
        limit = np.sqrt(6.0 / (2 * 5 + 4 * 5))
        self.assertTrue(np.all(np.abs(conv.weight.data) <= limit))


class LayerTestCase(unittest.TestCase):
    def test_dense_shapes(self):
        dense = Dense(3, 5, np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(2, 7, 3))
        out = dense(x)
        self.assertEqual(out.shape, (2, 7, 5))
        assert_allclose(out.data, x @ dense.weight.data.T, atol=1e-12)

    def test_dense_without_bias(self):
        dense = Dense(3, 2, np.random.default_rng(6), bias=False)
        self.assertIsNone(dense.bias)
        self.assertEqual(len(dense.parameters()), 1)

    def test_batchnorm_switches_statistics(self):
        bn = BatchNorm1d(2)
        x = np.random.default_rng(7).normal(3.0, 2.0, size=(4, 2, 6))
        train_out = bn(x).data
        bn.eval()
        eval_out = bn(x).data
        self.assertFalse(np.allclose(train_out, eval_out))
        assert_allclose(bn.buffer("running_mean"), 0.1 * x.mean(axis=(0, 2)))

    def test_layer_norm_normalizes_last_axis(self):
        ln = LayerNorm(6)
        out = ln(np.random.default_rng(8).normal(2.0, 3.0, size=(3, 6))).data
        assert_allclose(out.mean(axis=-1), np.zeros(3), atol=1e-12)
        assert_allclose(out.std(axis=-1), np.ones(3), atol=1e-5)


if __name__ == "__main__":
    unittest.main()
