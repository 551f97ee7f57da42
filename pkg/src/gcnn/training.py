"""Training loop (minibatch SGD on mean squared error), SRMSE evaluation,
and closed-form linear/ridge baselines.

The loop carves a chronological validation tail out of the training
samples and returns the parameters from the epoch with the best
validation SRMSE; selection never sees the test split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import WindowedRegressionSet
from .errors import ConfigError, DataError, NumericalError
from .models import Model
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "HistoryEntry",
    "TrainResult",
    "EvalReport",
    "mse_loss",
    "srmse",
    "train",
    "evaluate",
    "linear_baseline",
    "history_csv",
    "predictions_csv",
]


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults are decisions, not dogma."""

    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0.0:
            # zero is allowed: a no-op run is the cheapest sanity check
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"validation fraction must be in [0, 1), got {self.val_fraction}")
        if self.clip_norm <= 0.0:
            raise ConfigError(f"clip norm must be > 0, got {self.clip_norm}")


@dataclass
class HistoryEntry:
    epoch: int
    train_srmse: float
    val_srmse: float
    loss: float


@dataclass
class TrainResult:
    model: Model
    history: list[HistoryEntry]
    best_epoch: int
    best_val_srmse: float


@dataclass
class EvalReport:
    """Evaluation summary; srmse is NaN when the targets are constant."""

    srmse: float
    rmse: float
    se: float
    predictions: np.ndarray
    targets: np.ndarray
    times: np.ndarray
    target_name: str
    model_id: str = ""

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "target": self.target_name,
            "srmse": self.srmse,
            "rmse": self.rmse,
            "se": self.se,
            "samples": int(len(self.targets)),
        }


def mse_loss(predictions: Tensor, targets: Tensor) -> Tensor:
    """Mean squared residual (differentiable)."""
    if predictions.shape != targets.shape:
        raise DataError(f"prediction shape {predictions.shape} does not match targets {targets.shape}")
    d = predictions - targets
    return T.mean_all(d * d)


def srmse(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, float, float]:
    """(srmse, rmse, se): root mean squared error over the population
    standard deviation of the targets.  se = 0 gives srmse = NaN."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise DataError("predictions and targets must be equal-length and nonempty")
    rmse = float(np.sqrt(np.mean((targets - predictions) ** 2)))
    se = float(np.sqrt(np.mean((targets - np.mean(targets)) ** 2)))
    value = rmse / se if se > 0.0 else float("nan")
    return value, rmse, se


def _forward_batch(model: Model, inputs: np.ndarray) -> Tensor:
    outs = [T.reshape(model.forward(Tensor(x)), (1,)) for x in inputs]
    return T.concat(outs, axis=0)


def _predict_all(model: Model, wset: WindowedRegressionSet) -> np.ndarray:
    with T.no_grad():
        return np.array([model.forward(Tensor(x)).item() for x in wset.inputs])


def train(
    model: Model,
    train_set: WindowedRegressionSet,
    config: TrainConfig | None = None,
    epoch_hook: Callable[[int, Model], None] | None = None,
) -> TrainResult:
    """Minibatch SGD; returns the best-on-validation parameters.

    The validation set is the chronological tail of ``train_set``
    (``val_fraction`` of it, at least one sample).  Per epoch the history
    records the running train SRMSE (accumulated from minibatch
    predictions as the parameters move), a fresh validation SRMSE, and
    the mean squared error.  Training aborts with the epoch number if the
    loss leaves fp64 range.
    """
    config = config or TrainConfig()
    n = train_set.n_samples
    if config.val_fraction > 0.0:
        n_val = max(1, int(n * config.val_fraction))
    else:
        n_val = 0
    n_fit = n - n_val
    if n_fit < 1:
        raise DataError(f"validation carve-out leaves no training samples ({n} total)")
    fit_set = train_set.subset(range(n_fit))
    val_set = train_set.subset(range(n_fit, n)) if n_val else None

    params = model.named_params()
    tensors = [t for _, t in params]
    velocity = [np.zeros_like(t.data) for t in tensors]
    rng = np.random.default_rng(config.seed)

    history: list[HistoryEntry] = []
    best_val = math.inf
    best_epoch = 0
    best_snapshot = [t.data.copy() for t in tensors]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_fit)
        epoch_preds = np.empty(n_fit)
        sq_err_total = 0.0
        for lo in range(0, n_fit, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            preds = _forward_batch(model, fit_set.inputs[idx])
            loss = mse_loss(preds, Tensor(fit_set.targets[idx]))
            if not loss.is_finite():
                raise NumericalError(f"training diverged: non-finite loss at epoch {epoch}")
            epoch_preds[idx] = preds.data
            sq_err_total += loss.item() * len(idx)
            grads = T.backward(loss, leaves=tensors)
            gs = [grads[t] for t in tensors]
            gnorm = math.sqrt(sum(float((g * g).sum()) for g in gs))
            scale = config.clip_norm / gnorm if gnorm > config.clip_norm else 1.0
            for t, v, g in zip(tensors, velocity, gs):
                if config.momentum > 0.0:
                    v *= config.momentum
                    v += g * scale
                    t.data -= config.learning_rate * v
                else:
                    t.data -= config.learning_rate * (g * scale)
        train_srmse, _, _ = srmse(epoch_preds, fit_set.targets)
        if val_set is not None:
            val_srmse, _, _ = srmse(_predict_all(model, val_set), val_set.targets)
        else:
            val_srmse = train_srmse
        history.append(HistoryEntry(epoch, train_srmse, val_srmse, sq_err_total / n_fit))
        if val_srmse < best_val:
            best_val = val_srmse
            best_epoch = epoch
            best_snapshot = [t.data.copy() for t in tensors]
        if epoch_hook is not None:
            epoch_hook(epoch, model)

    for t, snap in zip(tensors, best_snapshot):
        t.data = snap
    return TrainResult(model, history, best_epoch, best_val)


def evaluate(model: Model, wset: WindowedRegressionSet, model_id: str = "") -> EvalReport:
    """SRMSE/RMSE of the model on a sample set (read-only)."""
    if wset.n_samples == 0:
        raise DataError("cannot evaluate on an empty set")
    preds = _predict_all(model, wset)
    value, rmse, se = srmse(preds, wset.targets)
    return EvalReport(value, rmse, se, preds, wset.targets.copy(), wset.times.copy(),
                      wset.target_name, model_id)


def linear_baseline(
    train_set: WindowedRegressionSet,
    test_set: WindowedRegressionSet,
    ridge_lambda: float = 0.0,
    model_id: str = "",
) -> EvalReport:
    """Least squares / ridge on flattened windows, intercept unpenalized.

    Solves (X'X + lambda*I)w = X'y with a dense solve; the identity is
    zeroed at the intercept coordinate.  A singular system at lambda = 0
    is reported with a pointer to ridge.
    """
    if ridge_lambda < 0.0:
        raise ConfigError(f"ridge penalty must be >= 0, got {ridge_lambda}")

    def design(wset: WindowedRegressionSet) -> np.ndarray:
        flat = wset.inputs.reshape(wset.n_samples, -1)
        return np.hstack([np.ones((wset.n_samples, 1)), flat])

    x = design(train_set)
    y = train_set.targets
    gram = x.T @ x
    if ridge_lambda > 0.0:
        penalty = np.eye(gram.shape[0]) * ridge_lambda
        penalty[0, 0] = 0.0  # keep the intercept unshrunk
        gram = gram + penalty
    try:
        weights = np.linalg.solve(gram, x.T @ y)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            "normal equations are singular; rerun with a ridge penalty > 0"
        ) from e
    preds = design(test_set) @ weights
    value, rmse, se = srmse(preds, test_set.targets)
    return EvalReport(value, rmse, se, preds, test_set.targets.copy(), test_set.times.copy(),
                      test_set.target_name, model_id)


def history_csv(history: Sequence[HistoryEntry]) -> str:
    """Render the training history as CSV."""
    lines = ["epoch,train_srmse,val_srmse,loss"]
    for h in history:
        lines.append(f"{h.epoch},{repr(h.train_srmse)},{repr(h.val_srmse)},{repr(h.loss)}")
    return "\n".join(lines) + "\n"


def predictions_csv(report: EvalReport) -> str:
    """Render per-sample predictions as CSV."""
    lines = ["t,target,prediction"]
    for t, target, pred in zip(report.times, report.targets, report.predictions):
        lines.append(f"{repr(float(t))},{repr(float(target))},{repr(float(pred))}")
    return "\n".join(lines) + "\n"
