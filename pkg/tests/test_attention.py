import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from tpsgta import attention
from tpsgta.attention import CtaBlock, Encoder, GtaBlock, PositionalEncoding, SaBlock, TpsBlock
from tpsgta.config import AttentionConfig
from tpsgta.errors import CapacityError, ShapeError
from tpsgta.tensor import Tensor
from tpsgta.verify import gradcheck


def zero_all(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


class CtaTestCase(unittest.TestCase):
    def setUp(self):
        self.block = CtaBlock(4, np.random.default_rng(0), r=2)
        self.F = np.random.default_rng(1).uniform(-2, 2, (4, 6))

    def test_zero_input(self):
        O, A = attention.cta_forward(self.block, np.zeros((4, 6)))
        assert_allclose(O.data, np.zeros((4, 6)))
        assert_allclose(A.data.sum(), 1.0)

    def test_rows_sum_to_one(self):
        _, A = attention.cta_forward(self.block, self.F)
        self.assertEqual(A.shape, (1, 6))
        assert_allclose(A.data.sum(axis=-1), [1.0], atol=1e-12)

    def test_permutation_equivariance(self):
        perm = np.random.default_rng(2).permutation(6)
        _, A = attention.cta_forward(self.block, self.F)
        _, A_perm = attention.cta_forward(self.block, self.F[:, perm])
        assert_allclose(A_perm.data, A.data[:, perm], atol=1e-12)

    def test_hidden_width_is_floored(self):
        block = CtaBlock(3, np.random.default_rng(3), r=16)
        self.assertEqual(block.w1.shape, (1, 3))

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            attention.cta_forward(self.block, np.zeros((3, 6)))


class GtaTestCase(unittest.TestCase):
    def setUp(self):
        self.block = GtaBlock(2, 8, np.random.default_rng(4), r=2)
        self.F = np.random.default_rng(5).uniform(-2, 2, (2, 8))

    def test_zero_weights(self):
        zero_all(self.block)
        O, A = attention.gta_forward(self.block, self.F)
        assert_allclose(A.data, np.full((1, 8), 0.5))
        assert_allclose(O.data, 0.5 * self.F)

    def test_zero_input(self):
        O, _ = attention.gta_forward(self.block, np.zeros((2, 8)))
        assert_allclose(O.data, np.zeros((2, 8)))

    def test_entries_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            _, A = attention.gta_forward(self.block, rng.uniform(-2, 2, (3, 2, 8)))
            self.assertTrue(np.all((A.data > 0) & (A.data < 1)))

    def test_not_permutation_equivariant(self):
        rng = np.random.default_rng(7)
        _, A = attention.gta_forward(self.block, self.F)
        found = False
        for _ in range(50):
            perm = rng.permutation(8)
            _, A_perm = attention.gta_forward(self.block, self.F[:, perm])
            if np.max(np.abs(A_perm.data - A.data[:, perm])) > 1e-6:
                found = True
                break
        self.assertTrue(found)

    def test_length_must_match(self):
        with self.assertRaises(ShapeError) as ctx:
            attention.gta_forward(self.block, np.zeros((2, 7)))
        self.assertIn("pad", str(ctx.exception))

    def test_hidden_width(self):
        block = GtaBlock(2, 10, np.random.default_rng(8), r=16)
        self.assertEqual(block.w2.shape, (1, 10))
        self.assertEqual(block.w3.shape, (10, 1))


class SaTestCase(unittest.TestCase):
    def setUp(self):
        self.block = SaBlock(4, np.random.default_rng(9))
        self.F = np.random.default_rng(10).uniform(-2, 2, (5, 4))

    def test_rows_sum_to_one_and_output_is_av(self):
        O, A = attention.sa_attention(self.block, self.F)
        assert_allclose(A.data.sum(axis=-1), np.ones(5), atol=1e-12)
        V = self.block.value(self.F).data
        assert_allclose(O.data, A.data @ V, atol=1e-12)

    def test_zero_query_gives_uniform_rows(self):
        self.block.layers[0].query.data[...] = 0.0
        O, A = attention.sa_attention(self.block, self.F)
        assert_allclose(A.data, np.full((5, 5), 0.2), atol=1e-15)
        V = self.block.value(self.F).data
        assert_allclose(O.data, np.tile(V.mean(axis=0), (5, 1)), atol=1e-12)

    def test_pooled_output_is_permutation_invariant(self):
        rng = np.random.default_rng(11)
        O, _ = attention.sa_attention(self.block, self.F)
        for _ in range(10):
            perm = rng.permutation(5)
            O_perm, _ = attention.sa_attention(self.block, self.F[perm])
            assert_allclose(O_perm.data.mean(axis=0), O.data.mean(axis=0), atol=1e-9)

    def test_heads_must_divide_width(self):
        with self.assertRaises(ShapeError):
            SaBlock(6, np.random.default_rng(12), heads=4)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            attention.sa_attention(self.block, np.zeros((5, 3)))

    def test_batched_matches_single(self):
        X = np.random.default_rng(13).normal(size=(3, 5, 4))
        O, A = attention.sa_attention(self.block, X)
        O1, A1 = attention.sa_attention(self.block, X[1])
        assert_allclose(O.data[1], O1.data, atol=1e-12)
        assert_allclose(A.data[1], A1.data, atol=1e-12)


class PseudoGaussianTestCase(unittest.TestCase):
    def test_diagonal_is_one(self):
        rng = np.random.default_rng(14)
        A2 = attention.tps_pseudo_gaussian(rng.uniform(1, 3, 6), rng.uniform(1, 3, 6)).data
        assert_allclose(np.diag(A2), np.ones(6), rtol=0, atol=0)

    def test_neighbours_at_half_spread(self):
        half = np.full(5, 0.5)
        A2 = attention.tps_pseudo_gaussian(half, half).data
        self.assertAlmostEqual(A2[2, 1], math.exp(-1), places=12)
        self.assertAlmostEqual(A2[2, 3], 0.367879, places=6)

    def test_asymmetric_spreads(self):
        A2 = attention.tps_pseudo_gaussian(np.ones(5), np.full(5, 0.5)).data
        self.assertAlmostEqual(A2[2, 1], math.exp(-0.25), places=12)
        self.assertAlmostEqual(A2[2, 3], math.exp(-1.0), places=12)
        self.assertNotAlmostEqual(A2[2, 1], A2[2, 3])

    def test_squared_distance(self):
        ones = np.ones(5)
        A2 = attention.tps_pseudo_gaussian(ones, ones, distance="squared").data
        self.assertAlmostEqual(A2[0, 2], math.exp(-1.0), places=12)
        with self.assertRaises(ValueError):
            attention.tps_pseudo_gaussian(ones, ones, distance="cubic")

    def test_combine_hand_example(self):
        out = attention.tps_combine(np.array([[0.5, 0.5]]), np.array([[1.0, math.exp(-1)]])).data
        assert_allclose(out, [[0.63348, 0.36652]], atol=1e-5)

    def test_combine_with_flat_neighbourhood(self):
        a1 = np.array([[0.7, 0.2, 0.1]])
        out = attention.tps_combine(a1, np.ones((1, 3))).data
        assert_allclose(out, (a1 + 1.0) / (a1 + 1.0).sum(), atol=1e-15)


class TpsTestCase(unittest.TestCase):
    def setUp(self):
        self.block = TpsBlock(4, np.random.default_rng(15), b=1.0)
        self.F = np.random.default_rng(16).uniform(-2, 2, (6, 4))

    def test_sigma_hand_values(self):
        layer = self.block.layers[0]
        layer.w.data[...] = [[1.0, 0.0, 0.0, 0.0]]
        layer.w_prime.data[...] = 0.0
        V = np.zeros((3, 4))
        V[1, 0] = -2.0
        sigma_hat, sigma = attention.tps_sigma(self.block, V)
        assert_allclose(sigma_hat.data, np.ones(3))
        assert_allclose(sigma.data, [1.0, 3.0, 1.0])

    def test_zero_spread_weights_ignore_values(self):
        layer = self.block.layers[0]
        layer.w.data[...] = 0.0
        layer.w_prime.data[...] = 0.0
        rng = np.random.default_rng(17)
        first = attention.tps_attention(self.block, rng.normal(size=(6, 4))).a2.data
        second = attention.tps_attention(self.block, rng.normal(size=(6, 4))).a2.data
        assert_allclose(first, second, rtol=0, atol=0)

    def test_normalization_properties(self):
        rng = np.random.default_rng(18)
        for trial in range(500):
            b = rng.uniform(0.1, 2.0)
            block = TpsBlock(4, np.random.default_rng(trial), heads=2, b=b)
            result = attention.tps_attention(block, rng.uniform(-2, 2, (2, 7, 4)))
            assert_allclose(result.attention.data.sum(axis=-1), np.ones((2, 7)), atol=1e-9)
            A2 = result.a2.data
            self.assertTrue(np.all(np.diagonal(A2, axis1=-2, axis2=-1) == 1.0))
            self.assertTrue(np.all((A2 > 0) & (A2 <= 1)))
            self.assertTrue(np.all(result.sigma.data >= b))
            self.assertTrue(np.all(result.sigma_hat.data >= b))

    def test_output_is_av(self):
        result = attention.tps_attention(self.block, self.F)
        V = self.block.value(self.F).data
        assert_allclose(result.output.data, result.attention.data @ V, atol=1e-12)

    def test_pooled_output_depends_on_order(self):
        rng = np.random.default_rng(19)
        pooled = attention.tps_attention(self.block, self.F).output.data.mean(axis=0)
        found = False
        for _ in range(20):
            perm = rng.permutation(6)
            permuted = attention.tps_attention(self.block, self.F[perm]).output.data.mean(axis=0)
            if np.max(np.abs(permuted - pooled)) > 1e-6:
                found = True
                break
        self.assertTrue(found)

    def test_learnable_scale_starts_at_identity(self):
        scaled = TpsBlock(4, np.random.default_rng(15), scaling="learnable")
        plain = attention.tps_attention(self.block, self.F)
        result = attention.tps_attention(scaled, self.F)
        self.assertEqual(scaled.layers[0].log_scale.shape, (1,))
        assert_allclose(result.attention.data, plain.attention.data, atol=1e-12)

    def test_bias_must_be_positive(self):
        with self.assertRaises(ValueError):
            TpsBlock(4, np.random.default_rng(0), b=0.0)


class PositionalEncodingTestCase(unittest.TestCase):
    def setUp(self):
        self.pe = PositionalEncoding(6, 3, np.random.default_rng(20))

    def test_zero_table_is_identity(self):
        self.pe.table.data[...] = 0.0
        X = np.random.default_rng(21).normal(size=(4, 3))
        assert_allclose(attention.pe_apply(self.pe, X).data, X)

    def test_single_step(self):
        X = np.ones((1, 3))
        assert_allclose(attention.pe_apply(self.pe, X).data, X + self.pe.table.data[:1])

    def test_gradient_reaches_first_rows_only(self):
        X = np.random.default_rng(22).normal(size=(2, 4, 3))
        attention.pe_apply(self.pe, X).sum().backward()
        assert_allclose(self.pe.table.grad[:4], np.full((4, 3), 2.0))
        assert_allclose(self.pe.table.grad[4:], np.zeros((2, 3)))

    def test_capacity(self):
        with self.assertRaises(CapacityError):
            attention.pe_apply(self.pe, np.zeros((7, 3)))

    def test_sinusoidal_has_no_parameters(self):
        pe = PositionalEncoding(6, 4, np.random.default_rng(23), kind="sinusoidal")
        self.assertEqual(pe.parameters(), [])
        out = attention.pe_apply(pe, np.zeros((3, 4))).data
        assert_allclose(out[0], [0.0, 1.0, 0.0, 1.0])
        assert_allclose(out[1, 0], math.sin(1.0))


class EncoderTestCase(unittest.TestCase):
    def setUp(self):
        self.cfg = AttentionConfig(d=4, heads=2)

    def test_zero_weights_reduce_to_double_layer_norm(self):
        encoder = Encoder(4, np.random.default_rng(24), self.cfg)
        for name, p in encoder.named_parameters():
            if not name.startswith(("norm1", "norm2")):
                p.data = np.zeros_like(p.data)
        X = np.random.default_rng(25).normal(size=(5, 4))
        expected = encoder.norm2(encoder.norm1(X)).data
        assert_allclose(attention.encoder_forward(encoder, X).data, expected, atol=1e-12)

    def test_shape_is_preserved(self):
        rng = np.random.default_rng(26)
        for kind in ("tps", "sa"):
            encoder = Encoder(4, rng, self.cfg, attention=kind)
            for n in (1, 5, 64):
                X = rng.normal(size=(n, 4))
                self.assertEqual(attention.encoder_forward(encoder, X).shape, (n, 4))

    def test_feed_forward_width(self):
        encoder = Encoder(4, np.random.default_rng(27), self.cfg)
        self.assertEqual(encoder.ff1.weight.shape, (16, 4))

    def test_unknown_attention(self):
        with self.assertRaises(ValueError):
            Encoder(4, np.random.default_rng(28), self.cfg, attention="dot")


class BlockGradientTestCase(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(29)

    def check(self, module, forward, shape):
        X = self.rng.uniform(-2, 2, shape)
        out_shape = forward(X).shape
        w = self.rng.normal(size=out_shape)
        report = gradcheck(lambda: (forward(X) * w).sum(), module.parameters())
        self.assertTrue(report.passed, report.to_frame().to_string())

    def test_cta(self):
        block = CtaBlock(4, self.rng, r=2)
        self.check(block, block, (2, 4, 6))

    def test_gta(self):
        block = GtaBlock(3, 8, self.rng, r=2)
        self.check(block, block, (2, 3, 8))

    def test_sa(self):
        block = SaBlock(4, self.rng, heads=2, layers=2)
        self.check(block, block, (2, 5, 4))

    def test_tps(self):
        block = TpsBlock(4, self.rng, heads=2, layers=2, scaling="learnable")
        self.check(block, block, (2, 5, 4))

    def test_tps_squared(self):
        block = TpsBlock(4, self.rng, distance="squared")
        self.check(block, block, (6, 4))

    def test_encoder(self):
        encoder = Encoder(4, self.rng, AttentionConfig(d=4))
        self.check(encoder, encoder, (2, 6, 4))

    def test_positional_encoding(self):
        pe = PositionalEncoding(8, 4, self.rng)
        self.check(pe, pe, (2, 6, 4))

    def test_input_gradient(self):
        block = TpsBlock(4, self.rng)
        X = Tensor(self.rng.uniform(-2, 2, (5, 4)), requires_grad=True)
        w = self.rng.normal(size=(5, 4))
        report = gradcheck(lambda: (block(X) * w).sum(), [X])
        self.assertTrue(report.passed, report.to_frame().to_string())


if __name__ == "__main__":
    unittest.main()
