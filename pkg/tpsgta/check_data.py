import numpy as np
import pandas as pd


def check_dataset(ds):
    """
    Runs through a series of non-fatal checks on a dataset before training

    Parameters:
    ds: (Dataset) parsed or generated dataset

    Returns:
    A list of warnings (list)
    """
    warnings_list = []
    if len(ds) == 0:
        return ["dataset contains no samples"]
    if not all(np.all(np.isfinite(s)) for s in ds.series):
        warnings_list.append("series contain non-finite values")
    constant = sum(
        int(np.sum(np.ptp(s[:, :n], axis=1) == 0)) for s, n in zip(ds.series, ds.lengths)
    )
    if constant:
        warnings_list.append(f"{constant} sample channels are constant and normalize to zeros")
    counts = pd.Series(ds.labels).value_counts().reindex(range(ds.n_classes), fill_value=0)
    for c in counts.index[counts == 0]:
        warnings_list.append(f"class '{ds.class_names[c]}' has no samples")
    present = counts[counts > 0]
    if len(present) and present.max() > 2 * present.min():
        warnings_list.append(
            f"classes are imbalanced ({present.min()} to {present.max()} samples per class)"
        )
    if len(set(ds.lengths)) > 1:
        warnings_list.append(
            f"series lengths vary from {min(ds.lengths)} to {max(ds.lengths)}; they will be zero-padded"
        )
    return warnings_list


def check_compatibility(ds, spec):
    """
    Checks whether a dataset can be fed to a model built from a plan

    Parameters:
    ds: (Dataset) data to train or evaluate on
    spec: (ModelSpec) layer plan of the model

    Returns:
    A list of blocking problems (list); empty when compatible
    """
    problems = []
    if ds.d != spec.d_dataset:
        problems.append(f"dataset has {ds.d} dimensions but the model expects {spec.d_dataset}")
    if ds.n_max > spec.length:
        problems.append(f"dataset series reach length {ds.n_max} but the model was built for {spec.length}")
    elif ds.n_max < spec.length and any(layer.kind == "gta" for layer in spec.layers):
        problems.append(f"series must be padded to length {spec.length} for the GTA blocks")
    if ds.n_classes > spec.num_classes:
        problems.append(f"dataset has {ds.n_classes} classes but the model predicts {spec.num_classes}")
    return problems
