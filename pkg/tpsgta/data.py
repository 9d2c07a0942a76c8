"""
Dataset ingestion and preparation: the .ts text format (equal or variable
length, labelled, no timestamps, no missing values), normalization,
padding, batching, holdout splits and seeded synthetic sets.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SyntheticSpec, derive_seed
from .errors import LabelError, ParseError, StructureError, UsageError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Labelled multivariate series.

    Attributes:
    series: list of (d, N_i) float64 arrays; padded datasets share one N
    labels: (n,) int array of class indices into class_names
    class_names: ordered class labels as they appear in the file header
    problem_name: name carried in the .ts header
    split: "train" or "test"
    lengths: original series lengths before any padding
    """

    series: List[np.ndarray]
    labels: np.ndarray
    class_names: Tuple[str, ...]
    problem_name: str = "unnamed"
    split: str = "train"
    lengths: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.lengths:
            object.__setattr__(self, "lengths", tuple(s.shape[1] for s in self.series))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))

    def __len__(self):
        return len(self.series)

    @property
    def d(self) -> int:
        return self.series[0].shape[0] if self.series else 0

    @property
    def n_max(self) -> int:
        return max((s.shape[1] for s in self.series), default=0)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def equal_length(self) -> bool:
        return len({s.shape[1] for s in self.series}) <= 1

    def subset(self, indices: Sequence[int], split: Optional[str] = None) -> "Dataset":
        indices = list(indices)
        return replace(
            self,
            series=[self.series[i] for i in indices],
            labels=self.labels[indices],
            lengths=tuple(self.lengths[i] for i in indices),
            split=split or self.split,
        )


# .ts reading and writing


def _split_from_name(path: Path) -> str:
    return "test" if path.stem.upper().endswith("_TEST") else "train"


def _parse_bool(tag, tokens, line_number):
    if len(tokens) < 2 or tokens[1].lower() not in ("true", "false"):
        raise ParseError(f"{tag} needs a true/false value", line_number)
    return tokens[1].lower() == "true"


def _parse_values(text, dimension, line_number) -> np.ndarray:
    cells = text.split(",")
    if any(cell.strip() == "?" for cell in cells):
        raise StructureError(f"line {line_number}: missing values ('?') are not supported")
    try:
        values = np.array([float(cell) for cell in cells], dtype=np.float64)
    except ValueError:
        raise ParseError(f"dimension {dimension + 1} has a non-numeric value", line_number)
    if not np.all(np.isfinite(values)):
        raise ParseError(f"dimension {dimension + 1} has a non-finite value", line_number)
    return values


def parse_ts(path, split: Optional[str] = None) -> Dataset:
    """
    Reads a labelled .ts file.

    Parameters:
    path: (str or Path) the file
    split: (str) "train" or "test"; inferred from a _TRAIN/_TEST file name
        suffix when omitted

    Returns:
    Dataset with one (d, N_i) array per data line; series of different
    lengths are kept as they are

    Raises:
    ParseError for malformed or non-UTF-8 lines (with the line number)
    StructureError for inconsistent dimension counts, timestamps, missing
        values, unlabelled files or files without data
    LabelError for a class label not declared in @classLabel
    """
    path = Path(path)
    problem_name = path.stem
    class_names = None
    declared_dims = None
    data_started = False
    series, labels = [], []
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError as e:
                raise ParseError(f"not valid UTF-8 text ({e.reason})", line_number)
            if not line or line.startswith("#"):
                continue
            if not data_started:
                if not line.startswith("@"):
                    raise ParseError("expected a header tag or @data", line_number)
                tokens = line.split()
                tag = tokens[0].lower()
                if tag == "@problemname":
                    if len(tokens) < 2:
                        raise ParseError("@problemName needs a value", line_number)
                    problem_name = line.split(None, 1)[1]
                elif tag == "@timestamps":
                    if _parse_bool(tag, tokens, line_number):
                        raise StructureError(f"line {line_number}: timestamped series are not supported")
                elif tag in ("@missing", "@univariate", "@equallength"):
                    _parse_bool(tag, tokens, line_number)
                elif tag in ("@dimensions", "@dimension", "@serieslength"):
                    if len(tokens) != 2 or not tokens[1].isdigit():
                        raise ParseError(f"{tokens[0]} needs a positive integer", line_number)
                    if tag != "@serieslength":
                        declared_dims = int(tokens[1])
                elif tag == "@classlabel":
                    if not _parse_bool(tag, tokens, line_number):
                        raise StructureError(f"line {line_number}: unlabelled files are not supported")
                    if len(tokens) < 3:
                        raise ParseError("@classLabel true needs the class values", line_number)
                    class_names = tuple(tokens[2:])
                elif tag == "@data":
                    if class_names is None:
                        raise StructureError(f"line {line_number}: @classLabel must come before @data")
                    data_started = True
                else:
                    logger.warning("%s line %d: ignoring unknown header tag %s", path.name, line_number, tokens[0])
                continue
            fields = line.split(":")
            if len(fields) < 2:
                raise ParseError("a data line needs at least one dimension and a class label", line_number)
            label = fields[-1].strip()
            dims = fields[:-1]
            if declared_dims is None:
                declared_dims = len(dims)
            if len(dims) != declared_dims:
                raise StructureError(
                    f"line {line_number}: found {len(dims)} dimensions, expected {declared_dims}"
                )
            values = [_parse_values(text, i, line_number) for i, text in enumerate(dims)]
            if len({len(v) for v in values}) != 1:
                raise StructureError(f"line {line_number}: dimensions of one series differ in length")
            if label not in class_names:
                raise LabelError(f"line {line_number}: class label {label!r} is not declared in @classLabel")
            series.append(np.stack(values))
            labels.append(class_names.index(label))
    if not data_started or not series:
        raise StructureError(f"{path} contains no data lines")
    return Dataset(
        series=series,
        labels=np.array(labels),
        class_names=class_names,
        problem_name=problem_name,
        split=split or _split_from_name(path),
    )


def write_ts(ds: Dataset, path) -> Path:
    """
    Writes a dataset as a .ts file. Values use the shortest representation
    that reads back to the same float64, and only the original (unpadded)
    part of each series is written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lengths = set(ds.lengths)
    header = [
        f"@problemName {ds.problem_name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if ds.d == 1 else 'false'}",
        f"@dimensions {ds.d}",
        f"@equalLength {'true' if len(lengths) == 1 else 'false'}",
    ]
    if len(lengths) == 1:
        header.append(f"@seriesLength {lengths.pop()}")
    header.append("@classLabel true " + " ".join(ds.class_names))
    header.append("@data")
    lines = []
    for values, label, length in zip(ds.series, ds.labels, ds.lengths):
        dims = [",".join(repr(float(v)) for v in row[:length]) for row in values]
        lines.append(":".join(dims) + ":" + ds.class_names[label])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(header + lines) + "\n")
    return path


# Preparation


def znormalize(ds: Dataset) -> Dataset:
    """
    Normalizes every channel of every sample to zero mean and unit standard
    deviation over its original length (std floored at 1e-8, so constant
    channels become zeros). Padding stays zero.
    """
    normalized = []
    for values, length in zip(ds.series, ds.lengths):
        out = np.zeros_like(values)
        part = values[:, :length]
        mean = part.mean(axis=1, keepdims=True)
        std = np.maximum(part.std(axis=1, keepdims=True), STD_FLOOR)
        out[:, :length] = (part - mean) / std
        normalized.append(out)
    return replace(ds, series=normalized)


def pad_to(ds: Dataset, N: int) -> Dataset:
    """
    Right-pads every series with zeros to length N. Original lengths are
    kept in `lengths`.

    Raises:
    UsageError if a series is longer than N
    """
    if N < ds.n_max:
        raise UsageError(f"cannot pad to {N}: the dataset has series of length {ds.n_max}")
    padded = [np.pad(values, ((0, 0), (0, N - values.shape[1]))) for values in ds.series]
    return replace(ds, series=padded)


def to_batch(ds: Dataset, indices: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stacks samples into a (B, d, N) array and their labels.

    Raises:
    UsageError if the selected series differ in length (pad first)
    """
    indices = range(len(ds)) if indices is None else indices
    chosen = [ds.series[i] for i in indices]
    if len({s.shape for s in chosen}) > 1:
        raise UsageError("series differ in length; pad the dataset before batching")
    return np.stack(chosen), ds.labels[list(indices)]


def holdout_split(ds: Dataset, fraction: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Stratified holdout: from every class with at least two samples, a seeded
    random `fraction` (at least one sample) moves to the validation set.

    Returns:
    Tuple (train, validation)
    """
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    held = []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) < 2:
            continue
        count = min(len(members) - 1, max(1, int(round(fraction * len(members)))))
        held.extend(rng.permutation(members)[:count].tolist())
    held_set = set(held)
    kept = [i for i in range(len(ds)) if i not in held_set]
    held.sort()
    logger.info("Holdout split of %s: %d train / %d validation", ds.problem_name, len(kept), len(held))
    return ds.subset(kept), ds.subset(held)


# Synthetic sets


def _bump_width(spec: SyntheticSpec) -> int:
    return max(2, spec.N // (2 * spec.n_classes))


def bump_start(spec: SyntheticSpec, c: int) -> int:
    """
    First time step of class c's bump in the positioned-bump set.
    """
    width = _bump_width(spec)
    start = int(round((c + 0.5) * spec.N / spec.n_classes - width / 2))
    return min(max(start, 0), spec.N - width)


def _hann(width: int) -> np.ndarray:
    # strictly positive on every step
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1, width + 1) / (width + 1))


def _channel_scale(d: int) -> np.ndarray:
    return (1.0 + 0.5 * np.arange(d))[:, None]


def _positioned_bump(spec, c, rng):
    width = _bump_width(spec)
    start = bump_start(spec, c)
    row = np.zeros(spec.N)
    row[start : start + width] = _hann(width)
    return _channel_scale(spec.d) * row


def _shifted_pattern(spec, c, rng):
    width = max(2, spec.N // 2)
    t = np.linspace(0.0, 1.0, width)
    pattern = np.sin(np.pi * (c + 1) * t)
    row = np.zeros(spec.N)
    start = int(rng.integers(0, spec.N - width + 1))
    row[start : start + width] = pattern
    return _channel_scale(spec.d) * row


def _frequency_mix(spec, c, rng):
    steps = np.arange(spec.N)
    phases = rng.uniform(0.0, 2 * np.pi, size=(spec.d, 1))
    return np.sin(2 * np.pi * (c + 1) * steps[None, :] / spec.N + phases)


_GENERATORS = {
    "positioned-bump": _positioned_bump,
    "shifted-pattern": _shifted_pattern,
    "frequency-mix": _frequency_mix,
}


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, Dataset]:
    """
    Generates a seeded train/test pair.

    positioned-bump: every class holds the same Hann bump, only its position
        differs, so the per-step value multisets are identical across classes
    shifted-pattern: classes differ in waveform shape; each sample places it
        at a random shift
    frequency-mix: classes differ in sinusoid frequency; phases are random

    Classes are balanced; each class is split half to train, half to test.
    """
    rng = np.random.default_rng(derive_seed(spec.seed, "data"))
    generator = _GENERATORS[spec.kind]
    labels = np.arange(spec.n_samples) % spec.n_classes
    series = []
    for c in labels:
        values = generator(spec, int(c), rng)
        if spec.noise > 0:
            values = values + rng.normal(0.0, spec.noise, size=values.shape)
        series.append(values)
    train_idx, test_idx = [], []
    for c in range(spec.n_classes):
        members = np.flatnonzero(labels == c)
        cut = (len(members) + 1) // 2
        train_idx.extend(members[:cut].tolist())
        test_idx.extend(members[cut:].tolist())
    full = Dataset(
        series=series,
        labels=labels,
        class_names=tuple(f"class{c}" for c in range(spec.n_classes)),
        problem_name=f"synthetic-{spec.kind}",
    )
    return full.subset(sorted(train_idx), split="train"), full.subset(sorted(test_idx), split="test")
