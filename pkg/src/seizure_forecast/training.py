"""Loss, class weighting, Adam, plateau scheduling and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DegenerateDataError, NumericError
from .layers import Model

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.001
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    plateau_min_delta: float = 1e-4
    min_lr: float = 1e-5
    sample_weight_boost: float = 4.0
    rng_seed: int = 0
    monitor: str = "val_loss"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.sample_weight_boost < 1:
            raise ConfigError("sample_weight_boost must be >= 1")
        if self.monitor != "val_loss":
            raise ConfigError("only val_loss can be monitored")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loss and class weights
# ---------------------------------------------------------------------------


def class_weights(class_counts: Mapping[int, int], total_samples: int | None = None) -> dict[int, float]:
    """Inverse-frequency weights: ``total / (n_classes * count)``."""
    if len(class_counts) != 2:
        raise ContractError(f"expected exactly 2 classes, got {sorted(class_counts)}")
    for c, n in class_counts.items():
        if n < 1:
            raise DegenerateDataError(f"class {c} has no samples; cannot weight an absent class")
    total = sum(class_counts.values())
    if total_samples is not None and total_samples != total:
        raise ContractError(f"total_samples={total_samples} but counts sum to {total}")
    return {c: total / (2 * n) for c, n in class_counts.items()}


def class_weights_for(labels: np.ndarray) -> dict[int, float]:
    labels = np.asarray(labels)
    counts = {0: int(np.sum(labels == 0)), 1: int(np.sum(labels == 1))}
    return class_weights(counts, len(labels))


def weighted_bce(prediction: float, label: int, weight: float = 1.0) -> float:
    p = min(max(float(prediction), PROB_FLOOR), 1.0 - PROB_FLOOR)
    return -weight * (label * math.log(p) + (1 - label) * math.log(1.0 - p))


def weighted_bce_tensor(pred: Tensor, labels: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean weighted binary cross-entropy over a batch, as a graph node.

    The lower clamp of ``1 - p`` lives in :func:`autodiff.log`, which is the
    same as clamping ``p`` to ``1 - 1e-12`` from above.
    """
    y = np.asarray(labels, dtype=np.float64)
    per_sample = y * ad.log(pred) + (1.0 - y) * ad.log(1.0 - pred)
    if weights is not None:
        per_sample = per_sample * np.asarray(weights, dtype=np.float64)
    return ad.neg(ad.mean(per_sample))


def bce_values(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.clip(scores, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = np.asarray(labels, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState, lr: float) -> None:
    """One Adam update, applied in place to ``params`` and ``state``."""
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.epochs]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "lr"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy), repr(r.lr)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                        float(r["val_accuracy"]), float(r["lr"]))
            for r in rows
        ])


class PlateauScheduler:
    """Halve (by ``factor``) the learning rate after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int = 3, factor: float = 0.5, min_delta: float = 1e-4, min_lr: float = 1e-5):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience:
            if self.lr > self.min_lr:
                self.lr = max(self.min_lr, self.lr * self.factor)
            self.wait = 0
        return self.lr


def reduce_lr_on_plateau(history: TrainHistory, config: TrainConfig) -> float:
    """Learning rate to use after the last epoch in ``history``.

    Replays the monitored validation losses through a fresh scheduler that
    starts at the learning rate of the first recorded epoch.
    """
    if not history.epochs:
        raise ContractError("history is empty")
    sched = PlateauScheduler(history.epochs[0].lr, config.plateau_patience, config.plateau_factor,
                             config.plateau_min_delta, config.min_lr)
    for r in history.epochs:
        sched.step(r.val_loss)
    return sched.lr


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------


def loss_and_grads(model: Model, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None):
    params = {name: Tensor(arr, requires_grad=True) for name, arr in model.parameters().items()}
    pred = model.forward(x, params)
    loss = weighted_bce_tensor(pred, y, weights)
    ad.backward(loss)
    grads = {name: t.grad if t.grad is not None else np.zeros_like(t.data) for name, t in params.items()}
    return loss.item(), grads


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> tuple[float, float]:
    """Unweighted mean BCE and accuracy at threshold 0.5."""
    scores = model.predict(x, batch_size=batch_size)
    loss = float(np.mean(bce_values(scores, y)))
    acc = float(np.mean((scores >= 0.5) == (np.asarray(y) == 1)))
    return loss, acc


def _arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(dataset, "windows"):
        return dataset.windows, dataset.labels
    x, y = dataset
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def train(
    model: Model,
    train_set,
    val_set,
    class_weights: Mapping[int, float] | None = None,
    sample_weights: np.ndarray | None = None,
    config: TrainConfig | None = None,
    on_batch: Callable[[np.ndarray], None] | None = None,
) -> tuple[Model, TrainHistory]:
    """Train ``model`` in place and return it with its history.

    ``train_set``/``val_set`` are :class:`SampleSet` objects or ``(x, y)``
    pairs.  ``on_batch`` receives the training-set indices of each
    mini-batch before its update.
    """
    config = config or TrainConfig()
    x, y = _arrays(train_set)
    vx, vy = _arrays(val_set)
    if len(x) == 0 or len(vx) == 0:
        raise ContractError("training and validation sets must be non-empty")
    n = len(x)
    if sample_weights is not None:
        sample_weights = np.asarray(sample_weights, dtype=np.float64)
        if sample_weights.shape != (n,):
            raise ContractError(f"sample_weights has length {len(sample_weights)}, expected {n}")
    cw = class_weights or {0: 1.0, 1: 1.0}
    per_sample = np.where(np.asarray(y) == 1, cw[1], cw[0]).astype(np.float64)
    if sample_weights is not None:
        per_sample = per_sample * sample_weights

    params = model.parameters()
    state = OptimizerState()
    sched = PlateauScheduler(config.learning_rate, config.plateau_patience, config.plateau_factor,
                             config.plateau_min_delta, config.min_lr)
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        order = np.random.default_rng(config.rng_seed + epoch).permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            if on_batch is not None:
                on_batch(idx)
            loss, grads = loss_and_grads(model, x[idx], y[idx], per_sample[idx])
            if not math.isfinite(loss):
                raise NumericError(f"loss diverged at epoch {epoch}, batch {b}")
            adam_step(params, grads, state, lr)
            total += loss * len(idx)
            count += len(idx)
        val_loss, val_acc = evaluate_loss(model, vx, vy)
        if not math.isfinite(val_loss):
            raise NumericError(f"validation loss diverged at epoch {epoch}")
        history.append(EpochRecord(epoch, total / count, val_loss, val_acc, lr))
        logger.info("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f lr=%g",
                    epoch, total / count, val_loss, val_acc, lr)
        sched.step(val_loss)
    return model, history
