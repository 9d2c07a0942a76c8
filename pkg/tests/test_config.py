import unittest

from pydantic import ValidationError

from tpsgta.config import VARIANTS, AttentionConfig, CliConfig, SyntheticSpec, TrainConfig, derive_seed


class ConfigTestCase(unittest.TestCase):
    def test_published_defaults(self):
        attention, train = AttentionConfig(), TrainConfig()
        self.assertEqual((attention.r, attention.b, attention.d), (16, 1.0, 128))
        self.assertEqual((attention.heads, attention.layers), (1, 1))
        self.assertEqual((train.learning_rate, train.epochs, train.batch_size), (1e-4, 400, 64))
        self.assertEqual((train.lr_factor, train.lr_patience), (0.1, 20))

    def test_heads_must_divide_width(self):
        with self.assertRaises(ValidationError):
            AttentionConfig(d=10, heads=4)
        self.assertEqual(AttentionConfig(d=12, heads=4).heads, 4)

    def test_invalid_values(self):
        for kwargs in ({"b": 0.0}, {"r": 0}, {"scaling": "softplus"}, {"unknown": 1}):
            with self.subTest(**kwargs):
                with self.assertRaises(ValidationError):
                    AttentionConfig(**kwargs)
        with self.assertRaises(ValidationError):
            TrainConfig(lr_factor=1.5)

    def test_unknown_variant(self):
        with self.assertRaises(ValidationError) as ctx:
            CliConfig(command="train", variant="fcn+cta")
        for variant in VARIANTS:
            self.assertIn(variant, str(ctx.exception))

    def test_synthetic_room(self):
        with self.assertRaises(ValidationError):
            SyntheticSpec(N=5, n_classes=3)

    def test_derive_seed(self):
        self.assertEqual(derive_seed(0, "init"), derive_seed(0, "init"))
        self.assertNotEqual(derive_seed(0, "init"), derive_seed(0, "shuffle"))
        self.assertNotEqual(derive_seed(0, "init"), derive_seed(1, "init"))
        self.assertGreaterEqual(derive_seed(7, "run0"), 0)
