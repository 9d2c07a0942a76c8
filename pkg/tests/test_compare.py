import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from tpsgta import compare
from tpsgta.errors import DataError, UsageError
from tpsgta.train import RunResult


def run(dataset, variant, seed, accuracy):
    return RunResult(dataset=dataset, variant=variant, seed=seed, train_accuracy=1.0, test_accuracy=accuracy)


class RankTestCase(unittest.TestCase):
    def setUp(self):
        self.table = pd.DataFrame(
            {"A": [0.9, 0.5, 0.7], "B": [0.8, 0.6, 0.9], "C": [0.7, 0.5, 0.8]},
            index=["x", "y", "z"],
        )

    def test_two_methods(self):
        ranks = compare.rank_average(pd.DataFrame({"a": [0.9], "b": [0.8]}, index=["x"]))
        self.assertEqual(ranks.tolist(), [1.0, 2.0])

    def test_tie_shares_ranks(self):
        ranks = compare.rank_average(pd.DataFrame({"a": [0.5], "b": [0.5]}, index=["x"]))
        self.assertEqual(ranks.tolist(), [1.5, 1.5])

    def test_hand_computed_table(self):
        ranks = compare.rank_average(self.table)
        self.assertAlmostEqual(ranks["A"], 6.5 / 3)
        self.assertAlmostEqual(ranks["B"], 4 / 3)
        self.assertAlmostEqual(ranks["C"], 2.5)

    def test_missing_cell(self):
        self.table.loc["y", "B"] = None
        with self.assertRaises(UsageError) as ctx:
            compare.rank_average(self.table)
        self.assertIn("y/B", str(ctx.exception))

    def test_wins_are_strict(self):
        wins = compare.wins_over_base(self.table, "A")
        self.assertEqual(wins.to_dict(), {"B": 2, "C": 1})

    def test_unknown_base(self):
        with self.assertRaises(UsageError):
            compare.wins_over_base(self.table, "D")


class TableTestCase(unittest.TestCase):
    def test_runs_are_averaged(self):
        df = compare.prepare_for_comparison(
            [run("Tiny", "fcn", 0, 0.5), run("Tiny", "fcn", 1, 0.7), run("Tiny", "fcn+tps", 0, 0.9)]
        )
        self.assertEqual(len(df), 3)
        table = compare.accuracy_table(df)
        self.assertAlmostEqual(table.loc["Tiny", "fcn"], 0.6)
        self.assertAlmostEqual(table.loc["Tiny", "fcn+tps"], 0.9)

    def test_load_skips_other_documents(self):
        with tempfile.TemporaryDirectory() as tmp:
            directory = Path(tmp)
            (directory / "nested").mkdir()
            (directory / "a.json").write_text(run("Tiny", "fcn", 0, 0.5).to_json())
            (directory / "nested" / "b.json").write_text(run("Tiny", "resnet", 0, 0.75).to_json())
            (directory / "audit.json").write_text(json.dumps({"enumerated": 182144}))
            results = compare.load_run_results(directory)
        self.assertEqual([r.variant for r in results], ["fcn", "resnet"])
        self.assertEqual(results[1].test_accuracy, 0.75)

    def test_load_missing_directory(self):
        with self.assertRaises(DataError):
            compare.load_run_results("no/such/directory")


if __name__ == "__main__":
    unittest.main()
