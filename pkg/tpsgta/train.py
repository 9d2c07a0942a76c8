"""
Training protocol: categorical cross-entropy, Adam, a plateau learning-rate
schedule on validation loss, fixed-epoch training and accuracy evaluation.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import TrainConfig, derive_seed
from .data import Dataset, holdout_split, to_batch
from .errors import DivergenceError, ShapeError, UsageError
from .layers import Module, Parameter
from .tensor import Tensor, as_tensor, log_softmax, no_grad

logger = logging.getLogger(__name__)


def cross_entropy(logits, labels) -> Tensor:
    """
    Mean negative log-likelihood of the true classes under softmax(logits).

    Parameters:
    logits: (Tensor) shape (B, C) or (C,)
    labels: (array-like of int) B class indices

    Raises:
    UsageError if a label is outside [0, C)
    """
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError(f"cross_entropy: logits {logits.shape} do not match {len(labels)} labels")
    classes = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= classes):
        raise UsageError(f"labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}")
    picked = log_softmax(logits, axis=-1)[np.arange(len(labels)), labels]
    return -picked.mean()


@dataclass
class AdamState:
    step: int
    m: List[np.ndarray]
    v: List[np.ndarray]


def adam_init(params: Sequence[Parameter]) -> AdamState:
    return AdamState(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """
    Applies one bias-corrected Adam update to the parameters in place.
    A missing gradient counts as zero.

    Returns:
    The updated optimizer state
    """
    if len(params) != len(state.m):
        raise ShapeError(f"optimizer state holds {len(state.m)} arrays for {len(params)} parameters")
    step = state.step + 1
    m_out, v_out = [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.zeros_like(p.data) if g is None else g
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_out.append(m)
        v_out.append(v)
    return AdamState(step, m_out, v_out)


class Adam:
    def __init__(self, params: Sequence[Parameter], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = adam_init(self.params)

    def step(self, lr: float):
        self.state = adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            lr,
            self.cfg.beta1,
            self.cfg.beta2,
            self.cfg.eps,
        )


class PlateauScheduler:
    """
    Multiplies the learning rate by `factor` once the monitored loss has not
    improved for `patience` consecutive epochs, then starts a new wait.
    """

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 20, min_lr: float = 0.0):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.wait = 0
        self.reductions = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience:
            reduced = max(self.lr * self.factor, self.min_lr)
            if reduced < self.lr:
                logger.info("Reducing learning rate from %g to %g", self.lr, reduced)
                self.lr = reduced
                self.reductions += 1
            self.wait = 0
        return self.lr


class EpochRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    learning_rate: float
    train_loss: float
    train_accuracy: float = Field(ge=0, le=1)
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = Field(None, ge=0, le=1)


class RunResult(BaseModel):
    """
    Outcome of one training run. Wall time is only filled in when timing was
    requested, so results of identical runs serialize identically.
    """

    model_config = ConfigDict(extra="forbid")

    variant: Optional[str] = None
    dataset: Optional[str] = None
    seed: int
    history: List[EpochRecord] = Field(default_factory=list)
    train_accuracy: float = Field(ge=0, le=1)
    test_accuracy: Optional[float] = Field(None, ge=0, le=1)
    wall_time: Optional[float] = None

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, exclude_none=True)


def predict(model: Module, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """
    Logits for a (B, d, N) array in evaluation mode.
    """
    model.eval()
    outputs = []
    with no_grad():
        for start in range(0, len(X), batch_size):
            outputs.append(model(X[start : start + batch_size]).data)
    return np.concatenate(outputs) if outputs else np.zeros((0, 0))


def _loss_and_accuracy(model, X, y, batch_size):
    logits = predict(model, X, batch_size)
    loss = cross_entropy(logits, y).item()
    return loss, float(np.mean(np.argmax(logits, axis=1) == y))


def evaluate(model: Module, ds: Dataset, batch_size: int = 256) -> float:
    """
    Fraction of samples whose highest logit is the true class; ties go to
    the lowest class index.
    """
    if len(ds) == 0:
        return 0.0
    X, y = to_batch(ds)
    logits = predict(model, X, batch_size)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def fit(
    model: Module,
    train_ds: Dataset,
    val_ds: Optional[Dataset],
    cfg: TrainConfig,
    test_ds: Optional[Dataset] = None,
    record_time: bool = False,
) -> RunResult:
    """
    Trains for cfg.epochs epochs of seeded shuffled mini-batches and
    evaluates the final-epoch model.

    Parameters:
    model: (Module) classifier whose forward maps (B, d, N) to logits
    train_ds: (Dataset) padded training data
    val_ds: (Dataset) monitored by the plateau schedule; when None a
        stratified cfg.val_fraction of train_ds is held out
    cfg: (TrainConfig)
    test_ds: (Dataset) optional, evaluated after training
    record_time: (bool) store the wall time in the result

    Raises:
    UsageError if the training split is empty
    DivergenceError if a batch loss becomes NaN or infinite
    """
    if len(train_ds) == 0:
        raise UsageError("cannot train on an empty training split")
    started = time.perf_counter()
    if val_ds is None:
        train_ds, val_ds = holdout_split(train_ds, cfg.val_fraction, cfg.seed)
    X, y = to_batch(train_ds)
    X_val, y_val = to_batch(val_ds) if len(val_ds) else (None, None)
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    optimizer = Adam(model.parameters(), cfg)
    scheduler = PlateauScheduler(cfg.learning_rate, cfg.lr_factor, cfg.lr_patience, cfg.min_lr)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(X))
        losses, correct = [], 0
        for step, start in enumerate(range(0, len(X), cfg.batch_size), start=1):
            batch = order[start : start + cfg.batch_size]
            model.zero_grad()
            logits = model(X[batch])
            loss = cross_entropy(logits, y[batch])
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"loss became {loss.item()} at epoch {epoch}, step {step}; "
                    "try a lower learning rate",
                    epoch=epoch,
                    step=step,
                )
            loss.backward()
            optimizer.step(scheduler.lr)
            losses.append(loss.item() * len(batch))
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y[batch]))
        record = EpochRecord(
            epoch=epoch,
            learning_rate=scheduler.lr,
            train_loss=float(np.sum(losses) / len(X)),
            train_accuracy=correct / len(X),
        )
        if X_val is not None:
            record.val_loss, record.val_accuracy = _loss_and_accuracy(model, X_val, y_val, cfg.batch_size)
        history.append(record)
        scheduler.step(record.val_loss if record.val_loss is not None else record.train_loss)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            logger.info(
                "epoch %d/%d lr=%g train_loss=%.4f train_acc=%.3f val_loss=%s",
                epoch,
                cfg.epochs,
                record.learning_rate,
                record.train_loss,
                record.train_accuracy,
                "n/a" if record.val_loss is None else f"{record.val_loss:.4f}",
            )
    result = RunResult(
        variant=getattr(getattr(model, "spec", None), "variant", None),
        dataset=train_ds.problem_name,
        seed=cfg.seed,
        history=history,
        train_accuracy=evaluate(model, train_ds, cfg.batch_size),
        test_accuracy=evaluate(model, test_ds, cfg.batch_size) if test_ds is not None else None,
    )
    if record_time:
        result.wall_time = time.perf_counter() - started
    return result
