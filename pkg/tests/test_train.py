import math
import os
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from tpsgta import train
from tpsgta.config import AttentionConfig, SyntheticSpec, TrainConfig
from tpsgta.data import Dataset, generate_synthetic
from tpsgta.errors import DivergenceError, ShapeError, UsageError
from tpsgta.layers import Module, Parameter
from tpsgta.models import build_model
from tpsgta.tensor import Tensor
from tpsgta.verify import gradcheck

SLOW = os.environ.get("TPSGTA_SLOW") == "1"


class FixedLogits(Module):
    def __init__(self, logits):
        self._logits = np.asarray(logits, dtype=float)

    def forward(self, x):
        return Tensor(self._logits[: len(x)])


def small_dataset(n=12, N=8, seed=0):
    train_ds, _ = generate_synthetic(
        SyntheticSpec(kind="frequency-mix", n_samples=2 * n, d=2, N=N, n_classes=2, seed=seed)
    )
    return train_ds


class CrossEntropyTestCase(unittest.TestCase):
    def test_uniform_logits(self):
        loss = train.cross_entropy(np.zeros((3, 4)), [0, 1, 3])
        self.assertAlmostEqual(loss.item(), math.log(4), places=12)
        self.assertAlmostEqual(loss.item(), 1.386294, places=6)

    def test_confident_logits(self):
        logits = np.array([[20.0, 0.0], [0.0, 20.0]])
        self.assertLess(train.cross_entropy(logits, [0, 1]).item(), 1e-8)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        logits = Parameter(rng.uniform(-2, 2, (5, 3)))
        labels = rng.integers(0, 3, 5)
        report = gradcheck(lambda: train.cross_entropy(logits, labels), [logits])
        self.assertTrue(report.passed)

    def test_label_out_of_range(self):
        with self.assertRaises(UsageError):
            train.cross_entropy(np.zeros((2, 3)), [0, 3])

    def test_label_count_mismatch(self):
        with self.assertRaises(ShapeError):
            train.cross_entropy(np.zeros((2, 3)), [0, 1, 2])


class AdamTestCase(unittest.TestCase):
    def test_first_step_moves_by_learning_rate(self):
        p = Parameter(np.array([0.5]))
        state = train.adam_step([p], [np.array([1.0])], train.adam_init([p]), lr=1e-3)
        self.assertAlmostEqual(0.5 - p.data[0], 1e-3, places=10)
        self.assertEqual(state.step, 1)

    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]))
        train.adam_step([p], [np.zeros(2)], train.adam_init([p]), lr=0.1)
        assert_array_equal(p.data, [1.0, -2.0])

    def test_missing_gradient_counts_as_zero(self):
        p = Parameter(np.array([1.0]))
        train.adam_step([p], [None], train.adam_init([p]), lr=0.1)
        assert_array_equal(p.data, [1.0])

    def test_deterministic(self):
        results = []
        for _ in range(2):
            rng = np.random.default_rng(1)
            p = Parameter(rng.normal(size=(3, 3)))
            state = train.adam_init([p])
            for _ in range(10):
                state = train.adam_step([p], [rng.normal(size=(3, 3))], state, lr=0.01)
            results.append(p.data.copy())
        assert_array_equal(results[0], results[1])

    def test_state_mismatch(self):
        p, q = Parameter(np.ones(1)), Parameter(np.ones(2))
        with self.assertRaises(ShapeError):
            train.adam_step([p, q], [None, None], train.adam_init([p]), lr=0.1)


class SchedulerTestCase(unittest.TestCase):
    def test_plateau_cuts_once(self):
        scheduler = train.PlateauScheduler(1e-4, factor=0.1, patience=20)
        rates = [scheduler.step(1.0) for _ in range(21)]
        self.assertEqual(rates[:20], [1e-4] * 20)
        self.assertAlmostEqual(rates[20], 1e-5, places=15)
        self.assertEqual(scheduler.reductions, 1)

    def test_one_cut_per_window(self):
        scheduler = train.PlateauScheduler(1.0, factor=0.5, patience=3)
        rates = [scheduler.step(2.0) for _ in range(10)]
        self.assertEqual(rates, [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.125])
        self.assertTrue(all(b <= a for a, b in zip(rates, rates[1:])))

    def test_improvement_resets_the_wait(self):
        scheduler = train.PlateauScheduler(1.0, factor=0.5, patience=3)
        for metric in (5.0, 5.0, 5.0, 4.0, 4.0, 4.0):
            scheduler.step(metric)
        self.assertEqual(scheduler.lr, 1.0)

    def test_minimum_rate(self):
        scheduler = train.PlateauScheduler(1.0, factor=0.1, patience=1, min_lr=0.05)
        for _ in range(5):
            scheduler.step(1.0)
        self.assertEqual(scheduler.lr, 0.05)
        self.assertEqual(scheduler.reductions, 2)


class EvaluateTestCase(unittest.TestCase):
    def setUp(self):
        self.ds = Dataset(
            series=[np.zeros((1, 3))] * 8,
            labels=np.array([0, 1, 2, 3, 0, 1, 2, 3]),
            class_names=("a", "b", "c", "d"),
        )

    def test_perfect_model(self):
        self.assertEqual(train.evaluate(FixedLogits(np.eye(4)[self.ds.labels]), self.ds), 1.0)

    def test_constant_logits_pick_lowest_class(self):
        self.assertEqual(train.evaluate(FixedLogits(np.zeros((8, 4))), self.ds), 0.25)

    def test_hand_count(self):
        ds = self.ds.subset(range(5))
        logits = [[0, 1, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 0, 1], [1, 1, 0, 0]]
        self.assertEqual(train.evaluate(FixedLogits(logits), ds), 0.6)


class FitTestCase(unittest.TestCase):
    def setUp(self):
        self.cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3, log_every=1)
        self.attention = AttentionConfig(d=4)
        self.ds = small_dataset()

    def model(self, seed=0):
        return build_model("tps-standalone", 2, 8, 2, self.attention, seed=seed)

    def test_history_and_holdout(self):
        with self.assertLogs("tpsgta", level="INFO") as logs:
            result = train.fit(self.model(), self.ds, None, self.cfg)
        self.assertTrue(any("Holdout split" in line for line in logs.output))
        self.assertEqual(len(result.history), 3)
        self.assertIsNotNone(result.history[0].val_loss)
        self.assertEqual(result.variant, "tps-standalone")
        self.assertIsNone(result.test_accuracy)
        self.assertTrue(0 <= result.train_accuracy <= 1)

    def test_seed_determinism(self):
        first = train.fit(self.model(), self.ds, None, self.cfg, test_ds=self.ds)
        second = train.fit(self.model(), self.ds, None, self.cfg, test_ds=self.ds)
        self.assertEqual(first.to_json(), second.to_json())
        self.assertNotIn("wall_time", first.to_json())

    def test_record_time(self):
        result = train.fit(self.model(), self.ds, self.ds, self.cfg, record_time=True)
        self.assertIsNotNone(result.wall_time)
        self.assertIn("wall_time", result.to_json())

    def test_divergence(self):
        broken = Dataset(
            series=[np.full((2, 8), np.inf)] * 4,
            labels=np.array([0, 1, 0, 1]),
            class_names=("a", "b"),
        )
        with self.assertRaises(DivergenceError) as ctx:
            train.fit(self.model(), broken, broken, self.cfg)
        self.assertEqual((ctx.exception.epoch, ctx.exception.step), (1, 1))

    def test_empty_training_split(self):
        empty = Dataset(series=[], labels=np.array([], dtype=int), class_names=("a", "b"))
        with self.assertRaises(UsageError):
            train.fit(self.model(), empty, self.ds, self.cfg)

    def test_loss_is_finite(self):
        result = train.fit(self.model(), self.ds, self.ds, self.cfg)
        self.assertTrue(all(math.isfinite(r.train_loss) and math.isfinite(r.val_loss) for r in result.history))


@unittest.skipUnless(SLOW, "set TPSGTA_SLOW=1 to run desk-scale training experiments")
class ExperimentTestCase(unittest.TestCase):
    def test_conv_variants_overfit(self):
        spec = SyntheticSpec(kind="shifted-pattern", n_samples=20, d=2, N=32, n_classes=2, seed=1)
        train_ds, _ = generate_synthetic(spec)
        cfg = TrainConfig(epochs=300, batch_size=10, learning_rate=1e-3, log_every=100)
        for variant in ("fcn", "fcn+gta", "fcn+tps", "fcn+tps+pe", "resnet", "resnet+gta", "resnet+tps", "resnet+tps+pe"):
            with self.subTest(variant=variant):
                model = build_model(variant, 2, 32, 2, AttentionConfig(), seed=1)
                result = train.fit(model, train_ds, train_ds, cfg)
                self.assertEqual(result.train_accuracy, 1.0)

    def test_relative_position_beats_plain_attention(self):
        cfg = TrainConfig(epochs=150, batch_size=16, learning_rate=1e-3, log_every=50)
        sa_scores, tps_scores = [], []
        for seed in range(5):
            spec = SyntheticSpec(kind="positioned-bump", n_samples=120, d=2, N=64, n_classes=3, seed=seed)
            train_ds, test_ds = generate_synthetic(spec)
            for variant, scores in (("sa-standalone", sa_scores), ("tps-standalone", tps_scores)):
                model = build_model(variant, 2, 64, 3, AttentionConfig(), seed=seed)
                run_cfg = cfg.model_copy(update={"seed": seed})
                scores.append(train.fit(model, train_ds, None, run_cfg, test_ds=test_ds).test_accuracy)
        self.assertLess(abs(np.mean(sa_scores) - 1 / 3), 0.1)
        self.assertGreaterEqual(np.mean(tps_scores), 0.9)


if __name__ == "__main__":
    unittest.main()
