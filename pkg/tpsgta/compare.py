import json
from pathlib import Path

import pandas as pd

from .errors import DataError, UsageError
from .train import RunResult


def load_run_results(directory):
    """
    Reads every RunResult JSON document in a directory (searched recursively).

    Parameters:
    directory: (str or Path) folder holding *.json run results

    Returns:
    A list of RunResult objects in file-name order
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    results = []
    for path in sorted(directory.rglob("*.json")):
        document = json.loads(path.read_text(encoding="utf-8"))
        if "train_accuracy" not in document or "seed" not in document:
            continue
        results.append(RunResult.model_validate(document))
    return results


def prepare_for_comparison(results):
    """
    This is the function that should be used when comparing multiple runs to one another.
    It takes a list of RunResults and outputs a single DataFrame with one row per run. This is
    the format expected by the other functions that perform run comparison.

    Parameters:
    results: A list of RunResult objects

    Returns:
    A DataFrame with dataset, variant, seed, epochs, train_accuracy and test_accuracy columns
    """
    rows = [
        {
            "dataset": r.dataset,
            "variant": r.variant,
            "seed": r.seed,
            "epochs": len(r.history),
            "train_accuracy": r.train_accuracy,
            "test_accuracy": r.test_accuracy,
        }
        for r in results
    ]
    return pd.DataFrame(
        rows, columns=["dataset", "variant", "seed", "epochs", "train_accuracy", "test_accuracy"]
    )


def accuracy_table(combined_df, metric="test_accuracy"):
    """
    Averages independent runs into one accuracy per dataset and variant.

    Parameters:
    combined_df: A DataFrame in the format provided by prepare_for_comparison
    metric: (str) column to average

    Returns:
    A DataFrame where the datasets are the index and the columns are the variants.
    """
    return combined_df.pivot_table(index="dataset", columns="variant", values=metric, aggfunc="mean")


def rank_average(accuracies):
    """
    Mean rank of every method across datasets. On each dataset the most
    accurate method gets rank 1; tied methods share the average of their ranks.

    Parameters:
    accuracies: A DataFrame with one row per dataset and one column per method

    Returns:
    A Series of mean ranks indexed by method

    Raises:
    UsageError if any cell is missing
    """
    if accuracies.isnull().values.any():
        missing = accuracies.isnull().stack()
        cells = [f"{d}/{m}" for (d, m), flag in missing.items() if flag]
        raise UsageError(f"rank average needs a complete table; missing cells: {', '.join(cells)}")
    ranks = accuracies.rank(axis=1, method="average", ascending=False)
    return ranks.mean(axis=0).rename("rank_average")


def wins_over_base(accuracies, base):
    """
    Counts, for every method, the datasets on which it is strictly more accurate than a base method.

    Parameters:
    accuracies: A DataFrame with one row per dataset and one column per method
    base: (str) column of the base method

    Returns:
    A Series of win counts indexed by method, without the base itself
    """
    if base not in accuracies.columns:
        raise UsageError(f"base method {base!r} is not a column of the table")
    others = accuracies.drop(columns=[base])
    return others.gt(accuracies[base], axis=0).sum().rename(f"wins_over_{base}")
