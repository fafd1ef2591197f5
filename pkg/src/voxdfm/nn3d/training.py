"""Loss, optimizer, training loop and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .layers import ShapeMismatch
from .network import Network, sigmoid

PRED_CLAMP = 1e-7


class EmptySplit(ValueError):
    pass


def bce_loss(y, y_hat) -> float:
    """Mean binary cross-entropy with predictions clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), PRED_CLAMP, 1.0 - PRED_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def bce_loss_grad(y, y_hat) -> np.ndarray:
    """Per-sample d(loss)/d(prediction) of the clamped loss (not averaged)."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), PRED_CLAMP, 1.0 - PRED_CLAMP)
    return -y / p + (1.0 - y) / (1.0 - p)


def bce_logit_grad(y, logits) -> np.ndarray:
    """d(mean loss)/d(logit) through the sigmoid: (sigmoid(z) - y) / N."""
    y = np.asarray(y, dtype=np.float64)
    return (sigmoid(np.asarray(logits, dtype=np.float64)) - y) / len(y)


@dataclass
class AdadeltaState:
    rho: float = 0.95
    eps: float = 1e-6
    sq_grad: list[np.ndarray] = field(default_factory=list)
    sq_step: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], rho: float = 0.95, eps: float = 1e-6) -> "AdadeltaState":
        return cls(rho, eps, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adadelta_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdadeltaState) -> None:
    """In-place update of ``params`` and the running averages in ``state``."""
    if len(params) != len(grads) or len(params) != len(state.sq_grad):
        raise ShapeMismatch("parameter, gradient and state lists differ in length")
    rho, eps = state.rho, state.eps
    for p, g, eg, ex in zip(params, grads, state.sq_grad, state.sq_step):
        if p.shape != g.shape or p.shape != eg.shape:
            raise ShapeMismatch(f"shape mismatch: param {p.shape}, grad {g.shape}")
        eg *= rho
        eg += (1 - rho) * g * g
        dx = -np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
        ex *= rho
        ex += (1 - rho) * dx * dx
        p += dx


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.25
    rho: float = 0.95
    eps: float = 1e-6
    track_train_accuracy: bool = True  # extra inference pass over the training set each epoch

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch size, patience and max epochs must be positive")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    train_accuracy: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int

    @property
    def best(self) -> EpochStats:
        return self.history[self.best_epoch - 1]


def train_step(net: Network, x: np.ndarray, y: np.ndarray, state: AdadeltaState) -> float:
    z = net.logits(x, train=True)
    net.backward(bce_logit_grad(y, z))
    params = [p for _, p in net.parameters()]
    adadelta_step(params, net.gradients(), state)
    return bce_loss(y, sigmoid(z.astype(np.float64)))


def train(
    net: Network,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochStats], bool | None] | None = None,
) -> TrainResult:
    """Minibatch training with early stopping on validation loss.

    Parameters of the best validation epoch are restored before returning.
    ``on_epoch`` may return True to stop after the current epoch.
    A trailing minibatch of a single sample is skipped (batch statistics
    need at least two).
    """
    xt, yt = train_data
    xv, yv = val_data
    if len(xt) == 0 or len(xv) == 0:
        raise EmptySplit("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    state = AdadeltaState.for_params([p for _, p in net.parameters()], cfg.rho, cfg.eps)
    history: list[EpochStats] = []
    best_loss, best_epoch, best_state = math.inf, 0, net.state()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xt))
        losses, weights = [], []
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            if len(idx) < 2:
                continue
            losses.append(train_step(net, xt[idx], yt[idx], state))
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        pv = net.predict(xv, cfg.batch_size)
        train_acc = math.nan
        if cfg.track_train_accuracy:
            pt = net.predict(xt, cfg.batch_size)
            train_acc = float(np.mean((pt >= 0.5) == (yt >= 0.5)))
        stats = EpochStats(
            epoch,
            train_loss,
            bce_loss(yv, pv),
            float(np.mean((pv >= 0.5) == (yv >= 0.5))),
            train_acc,
        )
        history.append(stats)
        halt = bool(on_epoch(stats)) if on_epoch else False
        if stats.val_loss < best_loss:
            best_loss, best_epoch, best_state = stats.val_loss, epoch, net.state()
        elif epoch - best_epoch >= cfg.patience:
            break
        if halt:
            break
    net.load_state(best_state)
    return TrainResult(history, best_epoch)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Manufacturable is the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @classmethod
    def from_predictions(cls, y_true, y_prob, threshold: float = 0.5) -> "ConfusionMatrix":
        t = np.asarray(y_true) >= 0.5
        p = np.asarray(y_prob) >= threshold
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))

    def row(self) -> dict[str, float]:
        return {
            "True Positive": self.tp,
            "True Negative": self.tn,
            "False Positive": self.fp,
            "False Negative": self.fn,
            "Accuracy": round(self.accuracy, 4),
        }


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, threshold: float = 0.5, batch_size: int = 32) -> ConfusionMatrix:
    if len(x) == 0:
        raise EmptySplit("nothing to evaluate")
    return ConfusionMatrix.from_predictions(y, net.predict(x, batch_size), threshold)
