import pandas as pd


def dataset_summary(train, test):
    """
    Creates the benchmark overview row for a train/test pair

    Parameters:
    train: (Dataset) training split
    test: (Dataset) test split

    Returns:
    DataFrame with one row: problem, train size, test size, dimensions,
    length, classes and whether lengths vary
    """
    return pd.DataFrame(
        [
            {
                "problem": train.problem_name,
                "train_size": len(train),
                "test_size": len(test),
                "dimensions": train.d,
                "length": max(train.n_max, test.n_max),
                "classes": train.n_classes,
                "variable_length": len(set(train.lengths) | set(test.lengths)) > 1,
            }
        ]
    )


def class_balance(ds):
    """
    Counts samples per class

    Parameters:
    ds: (Dataset)

    Returns:
    DataFrame indexed by class name with count and percent columns
    """
    counts = (
        pd.Series(ds.labels)
        .value_counts()
        .reindex(range(ds.n_classes), fill_value=0)
        .rename("count")
    )
    table = counts.to_frame()
    table.index = pd.Index(ds.class_names, name="class")
    table["percent"] = table["count"] / max(len(ds), 1) * 100
    return table


def length_summary(ds):
    """
    Series length statistics: min, mean and max over the original lengths
    """
    lengths = pd.Series(ds.lengths, dtype=float)
    return lengths.agg(["min", "mean", "max"])
