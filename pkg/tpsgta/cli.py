"""
Command-line entry point: train, eval, gradcheck, params, dump-attention
and synth.

Configuration precedence is flags > --config JSON file > defaults. The
effective configuration is printed as JSON before a subcommand runs.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage
error, 3 data error, 4 training divergence.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from . import __version__
from .check_data import check_compatibility, check_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .compare import accuracy_table, prepare_for_comparison
from .config import VARIANTS, CliConfig, derive_seed
from .data import generate_synthetic, pad_to, parse_ts, to_batch, write_ts, znormalize
from .errors import CompositionError, DataError, DivergenceError, NumericalError, ShapeError, UsageError
from .models import build_model, count_parameters
from .tensor import no_grad
from .train import evaluate, fit
from .verify import audit_encoder_count, gradcheck_variant

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

OUTPUT_ENV = "TPSGTA_OUTPUT_DIR"

# flag dest -> path inside CliConfig
_FLAG_PATHS = {
    "variant": ("variant",),
    "train_path": ("train_path",),
    "test_path": ("test_path",),
    "znorm": ("znorm",),
    "checkpoint": ("checkpoint",),
    "index": ("index",),
    "split": ("split",),
    "dims": ("dims",),
    "length": ("length",),
    "classes": ("classes",),
    "runs": ("runs",),
    "seed": ("seed",),
    "out_dir": ("out_dir",),
    "record_time": ("record_time",),
    "r": ("attention", "r"),
    "b": ("attention", "b"),
    "d": ("attention", "d"),
    "heads": ("attention", "heads"),
    "layers": ("attention", "layers"),
    "scaling": ("attention", "scaling"),
    "distance": ("attention", "distance"),
    "pe_kind": ("attention", "pe_kind"),
    "lr": ("train", "learning_rate"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr_factor": ("train", "lr_factor"),
    "lr_patience": ("train", "lr_patience"),
    "val_fraction": ("train", "val_fraction"),
    "synth": ("synth", "kind"),
    "n_samples": ("synth", "n_samples"),
    "noise": ("synth", "noise"),
}


class EvalReport(BaseModel):
    checkpoint: str
    variant: Optional[str] = None
    split: str
    samples: int
    accuracy: float


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration values")
    common.add_argument("--seed", type=int, help="root seed (default 0)")
    common.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUTPUT_ENV} or 'output')")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("--quiet", action="store_true", help="log warnings and errors only")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--train", dest="train_path", help="training split in .ts format")
    data.add_argument("--test", dest="test_path", help="test split in .ts format")
    data.add_argument(
        "--synth",
        choices=["positioned-bump", "shifted-pattern", "frequency-mix"],
        help="use a generated synthetic dataset instead of files",
    )
    data.add_argument("--n-samples", dest="n_samples", type=int, help="synthetic samples over both splits")
    data.add_argument("--noise", type=float, help="synthetic noise standard deviation")
    data.add_argument("--znorm", dest="znorm", action="store_true", default=None, help="z-normalize samples")
    data.add_argument("--no-znorm", dest="znorm", action="store_false", help="do not z-normalize samples")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--dims", type=int, help="input dimensions (d_dataset)")
    shape.add_argument("--length", type=int, help="series length N")
    shape.add_argument("--classes", type=int, help="number of classes")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--variant", help=f"one of: {', '.join(VARIANTS)}")
    model.add_argument("--r", type=int, help="GTA/CTA reduction factor")
    model.add_argument("--b", type=float, help="pseudo-Gaussian spread floor")
    model.add_argument("--d", type=int, help="encoder width")
    model.add_argument("--heads", type=int, help="attention heads")
    model.add_argument("--layers", type=int, help="stacked attention layers")
    model.add_argument("--scaling", choices=["identity", "learnable"], help="scaling of the softmax attention")
    model.add_argument("--distance", choices=["linear", "squared"], help="pseudo-Gaussian distance")
    model.add_argument("--pe-kind", dest="pe_kind", choices=["learnable", "sinusoidal"], help="positional table")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--lr", type=float, help="initial learning rate")
    training.add_argument("--epochs", type=int, help="training epochs")
    training.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size")
    training.add_argument("--lr-factor", dest="lr_factor", type=float, help="plateau reduction factor")
    training.add_argument("--lr-patience", dest="lr_patience", type=int, help="plateau patience in epochs")
    training.add_argument("--val-fraction", dest="val_fraction", type=float, help="holdout fraction")
    training.add_argument("--runs", type=int, help="independent runs with derived seeds")
    training.add_argument("--record-time", dest="record_time", action="store_true", default=None)

    stored = argparse.ArgumentParser(add_help=False)
    stored.add_argument("--checkpoint", help="checkpoint archive")
    stored.add_argument("--split", choices=["train", "test"], help="split to use (default test)")

    parser = argparse.ArgumentParser(prog="tpsgta", description="Temporal attention for time-series classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, data, shape, model, training], help="train a variant")
    sub.add_parser("eval", parents=[common, data, stored], help="evaluate a checkpoint")
    sub.add_parser("gradcheck", parents=[common, shape, model], help="check gradients of a variant")
    sub.add_parser("params", parents=[common, shape, model], help="count and audit parameters")
    dump = sub.add_parser("dump-attention", parents=[common, data, stored], help="write attention maps of a sample")
    dump.add_argument("--index", type=int, help="sample index (default 0)")
    sub.add_parser("synth", parents=[common, shape, data], help="write a synthetic dataset as .ts files")
    return parser


def _set(tree, path, value):
    for key in path[:-1]:
        tree = tree.setdefault(key, {})
    tree[path[-1]] = value


def resolve_config(args) -> CliConfig:
    """
    Merges defaults, the optional JSON config file and explicit flags.

    Raises:
    UsageError if the config file cannot be read, if synthetic-set flags
        come without --synth or if --synth is combined with --train/--test
    pydantic.ValidationError if a value is invalid
    """
    values = {"out_dir": os.environ.get(OUTPUT_ENV, "output")}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config file {args.config}: {e}")
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        for key, value in loaded.items():
            if isinstance(value, dict) and isinstance(values.get(key), dict):
                values[key].update(value)
            else:
                values[key] = value
    for dest, path in _FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is not None:
            _set(values, path, value)
    values["command"] = args.command
    if args.command == "synth":
        if values.get("synth") is None:
            values["synth"] = {}
        values["synth"].setdefault("kind", "positioned-bump")
    synth = values.get("synth")
    if isinstance(synth, dict) and "kind" not in synth:
        raise UsageError("--n-samples and --noise describe a synthetic dataset and need --synth")
    if synth is not None and (values.get("train_path") or values.get("test_path")):
        raise UsageError("give either --synth or --train/--test, not both")
    if isinstance(synth, dict):
        for key, source in (("d", "dims"), ("N", "length"), ("n_classes", "classes")):
            if getattr(args, source, None) is not None:
                synth.setdefault(key, getattr(args, source))
        synth.setdefault("seed", values.get("seed", 0))
    return CliConfig.model_validate(values)


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _require(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required for this command")
    return value


def load_data(cfg: CliConfig, length=None):
    """
    Reads or generates the train/test pair, optionally z-normalizes it and
    pads both splits to one length.
    """
    if cfg.synth is not None:
        train, test = generate_synthetic(cfg.synth)
        znorm = bool(cfg.znorm)
    elif cfg.train_path is not None or cfg.test_path is not None:
        train = test = None
        try:
            if cfg.train_path is not None:
                train = parse_ts(cfg.train_path, split="train")
            if cfg.test_path is not None:
                test = parse_ts(cfg.test_path, split="test")
        except FileNotFoundError as e:
            raise DataError(f"dataset file not found: {e.filename}")
        except OSError as e:
            raise DataError(f"cannot read dataset {e.filename}: {e.strerror}")
        znorm = cfg.znorm is None or cfg.znorm
    else:
        raise UsageError("give a dataset with --train/--test or a synthetic recipe with --synth")
    splits = [ds for ds in (train, test) if ds is not None]
    if znorm:
        splits = [znormalize(ds) for ds in splits]
    target = length or max(ds.n_max for ds in splits)
    try:
        splits = [pad_to(ds, target) for ds in splits]
    except UsageError as e:
        raise DataError(str(e))
    padded = iter(splits)
    train = next(padded) if train is not None else None
    test = next(padded) if test is not None else None
    return train, test


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_train(cfg: CliConfig) -> int:
    variant = _require(cfg.variant, "--variant")
    train, test = load_data(cfg)
    if train is None:
        raise UsageError("training needs a training split (--train or --synth)")
    for warning in check_dataset(train):
        logger.warning("%s: %s", train.problem_name, warning)
    out_dir = Path(cfg.out_dir)
    results = []
    for run in range(cfg.runs):
        seed = cfg.seed if cfg.runs == 1 else derive_seed(cfg.seed, f"run{run}")
        model = build_model(variant, train.d, train.n_max, train.n_classes, cfg.attention, seed)
        problems = check_compatibility(train, model.spec)
        if problems:
            raise DataError("; ".join(problems))
        train_cfg = cfg.train.model_copy(update={"seed": seed})
        result = fit(model, train, None, train_cfg, test_ds=test, record_time=cfg.record_time)
        stem = f"{train.problem_name}_{variant}_seed{seed}"
        save_checkpoint(model, out_dir / f"{stem}.ckpt")
        _write(out_dir / f"{stem}.json", result.to_json() + "\n")
        test_text = "n/a" if result.test_accuracy is None else f"{result.test_accuracy:.4f}"
        print(f"{variant} seed {seed}: train accuracy {result.train_accuracy:.4f}, test accuracy {test_text}")
        results.append(result)
    if cfg.runs > 1:
        combined = prepare_for_comparison(results)
        metric = "test_accuracy" if test is not None else "train_accuracy"
        print(accuracy_table(combined, metric).to_string())
    return EXIT_OK


def _load_for_checkpoint(cfg: CliConfig):
    model = load_checkpoint(_require(cfg.checkpoint, "--checkpoint"))
    train, test = load_data(cfg, length=model.spec.length)
    ds = test if cfg.split == "test" else train
    if ds is None:
        raise UsageError(f"no {cfg.split} split was given")
    problems = check_compatibility(ds, model.spec)
    if problems:
        raise DataError("; ".join(problems))
    return model, ds


def cmd_eval(cfg: CliConfig) -> int:
    model, ds = _load_for_checkpoint(cfg)
    accuracy = evaluate(model, ds)
    report = EvalReport(
        checkpoint=str(cfg.checkpoint),
        variant=model.spec.variant,
        split=cfg.split,
        samples=len(ds),
        accuracy=accuracy,
    )
    _write(Path(cfg.out_dir) / "eval.json", report.model_dump_json(indent=2) + "\n")
    print(f"accuracy on {len(ds)} {cfg.split} samples: {accuracy:.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: CliConfig) -> int:
    variant = _require(cfg.variant, "--variant")
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
    report = gradcheck_variant(variant, cfg.dims, cfg.length, cfg.classes, cfg.attention, cfg.seed)
    _write(Path(cfg.out_dir) / f"gradcheck_{variant}.json", report.model_dump_json(indent=2) + "\n")
    print(report.to_frame().to_string(index=False))
    print(f"gradient check {'passed' if report.passed else 'FAILED'} (tolerance {report.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_params(cfg: CliConfig) -> int:
    variant = _require(cfg.variant, "--variant")
    model = build_model(variant, cfg.dims, cfg.length, cfg.classes, cfg.attention)
    total, breakdown = count_parameters(model)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    breakdown.to_csv(out_dir / f"params_{variant}.csv", index=False)
    print(breakdown.to_string(index=False))
    print(f"total learnable parameters: {total:,}")
    if variant not in ("tps-standalone", "tps+pe"):
        return EXIT_OK
    audit = audit_encoder_count(cfg.attention, cfg.dims, cfg.classes)
    _write(out_dir / "audit.json", audit.model_dump_json(indent=2) + "\n")
    print(audit.to_frame().to_string(index=False))
    print(f"encoder count {audit.enumerated:,}, closed form {audit.formula:,}, delta {audit.delta}")
    return EXIT_OK if audit.delta == 0 else EXIT_VERIFY


def _matrix_frame(matrix: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(matrix, columns=[f"t{j}" for j in range(matrix.shape[1])])


def cmd_dump_attention(cfg: CliConfig) -> int:
    model, ds = _load_for_checkpoint(cfg)
    if not 0 <= cfg.index < len(ds):
        raise DataError(f"sample index {cfg.index} is out of range for {len(ds)} {cfg.split} samples")
    X, _ = to_batch(ds, [cfg.index])
    model.eval()
    with no_grad():
        _, maps = model.forward_with_maps(X)
    if "encoder" not in maps:
        raise UsageError("the checkpointed model has no attention encoder to dump")
    result = maps["encoder"]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = {"A": result.attention, "A1": result.a1, "A2": result.a2}
    for name, tensor in frames.items():
        if tensor is not None:
            _matrix_frame(tensor.data[0]).to_csv(out_dir / f"{name}.csv", index=False, float_format="%.17g")
    if result.sigma is not None:
        sigma = pd.DataFrame({"sigma_hat": result.sigma_hat.data[0], "sigma": result.sigma.data[0]})
        sigma.to_csv(out_dir / "sigma.csv", index=False, float_format="%.17g")
    print(f"wrote attention maps of {cfg.split} sample {cfg.index} to {out_dir}")
    return EXIT_OK


def cmd_synth(cfg: CliConfig) -> int:
    spec = cfg.synth
    train, test = generate_synthetic(spec)
    out_dir = Path(cfg.out_dir)
    for ds, suffix in ((train, "TRAIN"), (test, "TEST")):
        path = write_ts(ds, out_dir / f"{ds.problem_name}_{suffix}.ts")
        print(f"wrote {len(ds)} samples to {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "params": cmd_params,
    "dump-attention": cmd_dump_attention,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        cfg = resolve_config(args)
        print(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True))
        sys.stdout.flush()
        return COMMANDS[cfg.command](cfg)
    except DivergenceError as e:
        logger.error("training diverged: %s", e)
        return EXIT_DIVERGED
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_VERIFY
    except (DataError, ShapeError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    except (ValidationError, UsageError, CompositionError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
