import unittest

import numpy as np

from tpsgta import check_data, models
from tpsgta.config import AttentionConfig
from tpsgta.data import Dataset


class CheckDatasetTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.ds = Dataset(
            series=[rng.normal(size=(2, 6)) for _ in range(4)],
            labels=np.array([0, 1, 0, 1]),
            class_names=("a", "b"),
        )

    def test_clean_dataset(self):
        self.assertEqual(check_data.check_dataset(self.ds), [])

    def test_empty_dataset(self):
        empty = Dataset(series=[], labels=np.array([], dtype=int), class_names=("a",))
        self.assertEqual(check_data.check_dataset(empty), ["dataset contains no samples"])

    def test_non_finite_values(self):
        series = [s.copy() for s in self.ds.series]
        series[2][1, 3] = np.nan
        warnings = check_data.check_dataset(Dataset(series, self.ds.labels, self.ds.class_names))
        self.assertIn("series contain non-finite values", warnings)

    def test_constant_channels(self):
        series = [s.copy() for s in self.ds.series]
        series[0][0] = 4.0
        series[3][1] = 0.0
        warnings = check_data.check_dataset(Dataset(series, self.ds.labels, self.ds.class_names))
        self.assertEqual(warnings, ["2 sample channels are constant and normalize to zeros"])

    def test_missing_and_imbalanced_classes(self):
        ds = Dataset(self.ds.series, np.array([0, 0, 0, 1]), ("a", "b", "c"))
        warnings = check_data.check_dataset(ds)
        self.assertIn("class 'c' has no samples", warnings)
        self.assertIn("classes are imbalanced (1 to 3 samples per class)", warnings)

    def test_variable_lengths(self):
        ds = Dataset(self.ds.series[:1] + [np.ones((2, 9)) * np.arange(9)], np.array([0, 1]), ("a", "b"))
        warnings = check_data.check_dataset(ds)
        self.assertEqual(warnings, ["series lengths vary from 6 to 9; they will be zero-padded"])


class CompatibilityTestCase(unittest.TestCase):
    def setUp(self):
        self.ds = Dataset(
            series=[np.zeros((2, 10))] * 3,
            labels=np.array([0, 1, 2]),
            class_names=("a", "b", "c"),
        )

    def test_compatible(self):
        spec = models.variant_spec("fcn", 2, 10, 3)
        self.assertEqual(check_data.check_compatibility(self.ds, spec), [])

    def test_every_mismatch_is_reported(self):
        spec = models.variant_spec("tps-standalone", 3, 8, 2, AttentionConfig(d=8))
        problems = check_data.check_compatibility(self.ds, spec)
        self.assertEqual(len(problems), 3)
        self.assertIn("dataset has 2 dimensions but the model expects 3", problems)

    def test_gta_needs_full_length(self):
        spec = models.variant_spec("fcn+gta", 2, 12, 3)
        problems = check_data.check_compatibility(self.ds, spec)
        self.assertEqual(problems, ["series must be padded to length 12 for the GTA blocks"])
        self.assertEqual(check_data.check_compatibility(self.ds, models.variant_spec("fcn", 2, 12, 3)), [])
