"""
Verification harness: central finite differences, gradient checks against
the tape, the encoder parameter audit and a 1-nearest-neighbour baseline.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.spatial.distance import cdist

from .attention import CtaBlock, GtaBlock, SaBlock, TpsBlock
from .config import AttentionConfig, derive_seed
from .data import Dataset, pad_to, to_batch
from .errors import NumericalError
from .models import Model, build_model
from .tensor import Tensor, no_grad
from .train import cross_entropy

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
DEFAULT_FLOOR = 1e-8


def relative_error(ad, fd, floor: float = DEFAULT_FLOOR):
    """
    |ad - fd| / max(floor, |ad| + |fd|), elementwise.
    """
    ad, fd = np.asarray(ad, dtype=float), np.asarray(fd, dtype=float)
    return np.abs(ad - fd) / np.maximum(floor, np.abs(ad) + np.abs(fd))


def _name(param, i):
    return getattr(param, "name", "") or f"param{i}"


def _central(f, param, index, step):
    flat = param.data.reshape(-1)
    original = flat[index]
    flat[index] = original + step
    plus = f()
    flat[index] = original - step
    minus = f()
    flat[index] = original
    if not (np.isfinite(plus) and np.isfinite(minus)):
        raise NumericalError(f"function is not finite around coordinate {index} of {param!r}")
    return (plus - minus) / (2.0 * step)


def finite_diff_grad(
    f: Callable[[], float],
    params: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    coordinates: Optional[Dict[int, Sequence[int]]] = None,
) -> List[np.ndarray]:
    """
    Central-difference gradient of a scalar function of the parameters.

    Parameters:
    f: () -> float, reads the current parameter values
    params: tensors perturbed in place (and restored)
    step: (float) h in (f(x+h) - f(x-h)) / 2h
    coordinates: optional {parameter position: flat indices}; only those
        coordinates are evaluated and the rest are NaN

    Raises:
    NumericalError naming the coordinate where f is not finite
    """
    grads = []
    for i, param in enumerate(params):
        grad = np.full(param.data.shape, np.nan)
        flat_grad = grad.reshape(-1)
        indices = range(param.data.size) if coordinates is None or i not in coordinates else coordinates[i]
        for index in indices:
            flat_grad[index] = _central(f, param, index, step)
        grads.append(grad)
    return grads


class ParameterCheck(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    checked: int
    max_relative_error: float
    failing: List[int]
    nonsmooth: List[int]


class GradCheckReport(BaseModel):
    """
    Per-parameter outcome of a gradient check. Coordinates whose difference
    quotients disagree between step h and h/2 sit on a kink (ReLU or |x|)
    and are listed as nonsmooth instead of failing.
    """

    model_config = ConfigDict(extra="forbid")

    step: float
    tolerance: float
    floor: float
    passed: bool
    parameters: List[ParameterCheck]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "parameter": p.name,
                    "checked": p.checked,
                    "max_relative_error": p.max_relative_error,
                    "failing": len(p.failing),
                    "nonsmooth": len(p.nonsmooth),
                }
                for p in self.parameters
            ]
        )


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    floor: float = DEFAULT_FLOOR,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compares tape gradients with central finite differences.

    Parameters:
    loss_fn: () -> scalar Tensor, rebuilt from the current parameters
    params: tensors with requires_grad set
    step / tolerance / floor: difference step, pass threshold and the
        denominator floor of the relative error
    max_coords: check at most this many seeded random coordinates per
        parameter (all when None)
    seed: (int) coordinate sampling seed
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(derive_seed(seed, "gradcheck"))

    def f():
        with no_grad():
            return loss_fn().item()

    checks = []
    for i, param in enumerate(params):
        size = param.data.size
        if max_coords is not None and size > max_coords:
            indices = np.sort(rng.choice(size, max_coords, replace=False))
        else:
            indices = np.arange(size)
        ad = analytic[i].reshape(-1)
        worst, failing, nonsmooth = 0.0, [], []
        for index in indices:
            index = int(index)
            fd = _central(f, param, index, step)
            err = float(relative_error(ad[index], fd, floor))
            if err >= tolerance:
                fd_half = _central(f, param, index, step / 2)
                half_err = float(relative_error(ad[index], fd_half, floor))
                if half_err < tolerance:
                    err = half_err
                elif float(relative_error(fd, fd_half, floor)) >= tolerance:
                    nonsmooth.append(index)
                    continue
                else:
                    failing.append(index)
            worst = max(worst, err)
        checks.append(
            ParameterCheck(
                name=_name(param, i),
                checked=len(indices),
                max_relative_error=worst,
                failing=failing,
                nonsmooth=nonsmooth,
            )
        )
    passed = not any(c.failing for c in checks)
    if not passed:
        bad = [c.name for c in checks if c.failing]
        logger.warning("Gradient check failed for %s", ", ".join(bad))
    return GradCheckReport(step=step, tolerance=tolerance, floor=floor, passed=passed, parameters=checks)


def gradcheck_model(
    model: Model,
    X: np.ndarray,
    labels: Optional[np.ndarray] = None,
    seed: int = 0,
    **kwargs,
) -> GradCheckReport:
    """
    Gradient check of a whole model. The loss is cross-entropy when labels
    are given, otherwise the logits projected on a seeded random direction.
    """
    model.train()
    if labels is None:
        logits_shape = model(X).shape
        direction = np.random.default_rng(derive_seed(seed, "direction")).standard_normal(logits_shape)

        def loss_fn():
            return (model(X) * direction).sum()

    else:

        def loss_fn():
            return cross_entropy(model(X), labels)

    return gradcheck(loss_fn, model.parameters(), seed=seed, **kwargs)


def gradcheck_variant(
    variant: str,
    d_dataset: int = 2,
    N: int = 8,
    num_classes: int = 2,
    cfg: Optional[AttentionConfig] = None,
    seed: int = 0,
    batch: int = 2,
    max_coords: Optional[int] = 4,
    floor: float = 1e-6,
    **kwargs,
) -> GradCheckReport:
    """
    Builds a named variant at small size and checks its gradients on a
    seeded random batch drawn from [-2, 2]. Conv biases ahead of batch
    normalization have an exact zero gradient, hence the raised floor.
    """
    model = build_model(variant, d_dataset, N, num_classes, cfg, seed)
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-input"))
    X = rng.uniform(-2.0, 2.0, size=(batch, d_dataset, N))
    return gradcheck_model(model, X, seed=seed, max_coords=max_coords, floor=floor, **kwargs)


# Encoder parameter audit

_TERMS = (
    ("embed.weight", "d_dataset*d", "input projection weights"),
    ("embed.bias", "11d", "input projection bias"),
    ("encoder.attention.value.weight", "9d^2", "value projection"),
    ("encoder.attention.value.bias", "11d", "value projection bias"),
    (".query", "l*d^2", "query projection"),
    (".key", "(l/h)*d^2", "shared key projection"),
    (".w_prime", "2l*d", "backward spread weights W'"),
    (".w", "2l*d", "forward spread weights W"),
    ("encoder.ff1.weight", "9d^2", "feed-forward expansion"),
    ("encoder.ff2.weight", "9d^2", "feed-forward contraction"),
    ("encoder.ff1.bias", "11d", "feed-forward expansion bias"),
    ("encoder.ff2.bias", "11d", "feed-forward contraction bias"),
    ("encoder.norm1.", "11d", "layer norm after attention"),
    ("encoder.norm2.", "11d", "layer norm after feed-forward"),
)


def _term(name):
    for pattern, term, role in _TERMS:
        if (pattern.startswith(".") and name.endswith(pattern)) or name.startswith(pattern):
            return term, role
    return None, None


class AuditItem(BaseModel):
    name: str
    shape: str
    count: int
    term: Optional[str]
    role: str


class AuditReport(BaseModel):
    """
    Enumerated parameter count of the standalone TPS encoder against the
    closed form (l + 9 + l/h) d^2 + (d_dataset + 2l + 11) d. Items without a
    term (classification head, positional table, learnable attention scale)
    are outside the formula's scope.
    """

    layers: int
    heads: int
    d: int
    d_dataset: int
    enumerated: int
    formula: int
    delta: int
    items: List[AuditItem]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([item.model_dump() for item in self.items])


def encoder_count_formula(cfg: AttentionConfig, d_dataset: int) -> int:
    l, h, d = cfg.layers, cfg.heads, cfg.d
    return (l + 9) * d * d + l * d * (d // h) + (d_dataset + 2 * l + 11) * d


def audit_encoder_count(cfg: Optional[AttentionConfig] = None, d_dataset: int = 2, num_classes: int = 2) -> AuditReport:
    """
    Itemizes every weight array of a tps-standalone model against a formula
    term and compares the in-scope total with the closed form.
    """
    cfg = cfg or AttentionConfig()
    model = build_model("tps-standalone", d_dataset, 8, num_classes, cfg)
    items = []
    for name, param in model.named_parameters():
        term, role = _term(name)
        items.append(
            AuditItem(
                name=name,
                shape="x".join(str(s) for s in param.shape),
                count=int(param.data.size),
                term=term,
                role=role or "outside scope",
            )
        )
    enumerated = sum(item.count for item in items if item.term is not None)
    formula = encoder_count_formula(cfg, d_dataset)
    return AuditReport(
        layers=cfg.layers,
        heads=cfg.heads,
        d=cfg.d,
        d_dataset=d_dataset,
        enumerated=enumerated,
        formula=formula,
        delta=enumerated - formula,
        items=items,
    )


# Oracle support


def block_weights(block) -> dict:
    """
    Copies a block's parameters into the plain-array layout the loop oracles
    take (first stacked layer for SA/TPS).
    """
    if isinstance(block, CtaBlock):
        return {"w1": block.w1.data, "w2": block.w2.data}
    if isinstance(block, GtaBlock):
        return {"w1": block.w1.data, "w2": block.w2.data, "w3": block.w3.data}
    if isinstance(block, SaBlock):
        layer = block.layers[0]
        weights = {
            "query": layer.query.data,
            "key": layer.key.data,
            "value": block.value.weight.data,
            "value_bias": block.value.bias.data,
            "heads": block.heads,
        }
        if isinstance(block, TpsBlock):
            weights.update(w=layer.w.data, w_prime=layer.w_prime.data, b=block.b, distance=block.distance)
            if block.scaling == "learnable":
                weights["log_scale"] = layer.log_scale.data
        return weights
    raise TypeError(f"no oracle layout for {type(block).__name__}")


def nearest_neighbor_accuracy(train: Dataset, test: Dataset) -> float:
    """
    Test accuracy of a 1-nearest-neighbour classifier under Euclidean
    distance on zero-padded series. Ties go to the earliest training sample.
    """
    length = max(train.n_max, test.n_max)
    X_train, y_train = to_batch(pad_to(train, length))
    X_test, y_test = to_batch(pad_to(test, length))
    distances = cdist(X_test.reshape(len(X_test), -1), X_train.reshape(len(X_train), -1))
    predicted = y_train[np.argmin(distances, axis=1)]
    return float(np.mean(predicted == y_test))
