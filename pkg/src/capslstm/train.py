"""MSE loss, Adam, plateau learning-rate decay and the epoch loop."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .data import WindowedDataset
from .model import ArchSpec, Checkpoint, build_model, model_forward
from .numcore import GradTape, ParameterSet, Prng, ShapeError, Tensor

__all__ = [
    "TrainingError",
    "TrainConfig",
    "AdamState",
    "EpochRecord",
    "PlateauScheduler",
    "mse_loss",
    "adam_step",
    "plateau_update",
    "batch_gradients",
    "evaluate_loss",
    "train",
    "format_log",
]

# substreams of the run seed
INIT_STREAM = 1
SHUFFLE_STREAM = 2
IMPROVEMENT_THRESHOLD = 1e-7


class TrainingError(RuntimeError):
    """Non-finite loss or gradient, or an unusable dataset."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay_factor: float = 0.95
    plateau_patience: int = 5
    min_lr: float = 1e-6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    parallel_groups: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if not (self.min_lr > 0 and self.lr > 0):
            raise ValueError("lr and min_lr must be positive")
        if self.parallel_groups < 1 or self.workers < 1:
            raise ValueError("parallel_groups and workers must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "AdamState":
        return cls({k: np.zeros(p.shape) for k, p in params.items()},
                   {k: np.zeros(p.shape) for k, p in params.items()})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch},{self.train_mse!r},{self.val_mse!r},{self.lr!r}"


def format_log(records) -> str:
    return "epoch,train_mse,val_mse,lr\n" + "".join(r.line() + "\n" for r in records)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared residuals over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = nc.sub(pred, target)
    return nc.mean(nc.mul(diff, diff))


def adam_step(state: AdamState, params: ParameterSet, grads, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    for name, g in grads.items():
        g = nc.as_tensor(g)
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g.data)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, m_out, v_out = ParameterSet(), {}, {}
    for name, p in params.items():
        g = nc.as_tensor(grads[name]).data
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        new_params[name] = Tensor._wrap(p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(m_out, v_out, t)


class PlateauScheduler:
    """Multiply lr by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is below the best seen so far by more
    than ``threshold``. The wait counter resets after each decay.
    """

    def __init__(self, factor: float = 0.95, patience: int = 5, min_lr: float = 1e-6,
                 threshold: float = IMPROVEMENT_THRESHOLD):
        self.factor, self.patience, self.min_lr, self.threshold = factor, patience, min_lr, threshold
        self.best = math.inf
        self.wait = 0

    def observe(self, loss: float) -> bool:
        """Update the counters with one epoch's loss; True if a decay is due."""
        if loss < self.best - self.threshold:
            self.best = loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return True
        return False

    def step(self, loss: float, lr: float) -> float:
        if self.observe(loss):
            return max(lr * self.factor, self.min_lr)
        return lr


def plateau_update(history, lr: float, config: TrainConfig) -> float:
    """Learning rate after the last epoch of ``history``.

    Replays the whole loss history; only a decay triggered by the final
    entry changes ``lr`` (earlier decays are assumed already applied).
    """
    if len(history) == 0:
        raise ValueError("empty loss history")
    sched = PlateauScheduler(config.lr_decay_factor, config.plateau_patience, config.min_lr)
    triggered = [sched.observe(float(loss)) for loss in history]
    return max(lr * config.lr_decay_factor, config.min_lr) if triggered[-1] else lr


def _windows(x: np.ndarray) -> Tensor:
    return Tensor._wrap(x[:, :, None])


def batch_gradients(spec: ArchSpec, params: ParameterSet, X: np.ndarray, Y: np.ndarray,
                    denom: int | None = None) -> tuple[float, ParameterSet]:
    """Sum of squared errors over the batch divided by ``denom``, and its gradient.

    ``denom`` defaults to ``X.shape[0] * H`` (plain MSE); data-parallel
    groups pass the full batch's element count so group losses add up.
    """
    if denom is None:
        denom = Y.size
    with GradTape() as tape:
        tape.watch(params)
        pred = model_forward(spec, params, _windows(X))
        diff = nc.sub(pred, Tensor._wrap(Y))
        loss = nc.scale(nc.sum(nc.mul(diff, diff)), 1.0 / denom)
    return loss.item(), tape.gradient(loss, params)


def _group_gradients(spec, params, X, Y, groups: int, pool):
    denom = Y.size
    chunks = [c for c in np.array_split(np.arange(len(X)), groups) if len(c)]
    jobs = [(X[c], Y[c]) for c in chunks]
    run = lambda job: batch_gradients(spec, params, job[0], job[1], denom)  # noqa: E731
    results = list(pool.map(run, jobs)) if pool is not None else [run(j) for j in jobs]
    loss = 0.0
    grads = {k: np.zeros(p.shape) for k, p in params.items()}
    for part_loss, part in results:  # fixed group order
        loss += part_loss
        for k in grads:
            grads[k] += part[k].data
    return loss, ParameterSet(grads)


def evaluate_loss(spec: ArchSpec, params: ParameterSet, X: np.ndarray, Y: np.ndarray,
                  chunk: int = 256) -> float:
    """MSE over all pairs, evaluated without a tape."""
    if len(X) == 0:
        return math.nan
    total = 0.0
    for s in range(0, len(X), chunk):
        pred = model_forward(spec, params, _windows(X[s:s + chunk])).data
        total += float(np.sum((pred - Y[s:s + chunk]) ** 2))
    return total / Y.size


def train(spec: ArchSpec, dataset: WindowedDataset, config: TrainConfig,
          extras: dict | None = None,
          callback: Callable[[EpochRecord], bool | None] | None = None
          ) -> tuple[Checkpoint, list[EpochRecord]]:
    """Run the epoch loop and return the final checkpoint and the epoch log.

    Each epoch shuffles the training pairs (Fisher-Yates on the run seed),
    takes Adam steps over mini-batches (the last one may be short), then
    feeds the validation MSE to the plateau schedule. If there are no
    validation pairs the schedule watches the training MSE instead.
    ``callback`` sees every epoch record and may return True to stop.
    """
    if dataset.d != spec.d or dataset.H != spec.H:
        raise TrainingError(f"dataset windows (d={dataset.d}, H={dataset.H}) do not match "
                            f"the model (d={spec.d}, H={spec.H})")
    X, Y = dataset.train_x, dataset.train_y
    if len(X) == 0:
        raise TrainingError("no training pairs")
    params = build_model(spec, Prng(config.seed, INIT_STREAM))
    shuffler = Prng(config.seed, SHUFFLE_STREAM)
    state = AdamState.zeros_like(params)
    sched = PlateauScheduler(config.lr_decay_factor, config.plateau_patience, config.min_lr)
    lr = config.lr
    log: list[EpochRecord] = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffler.shuffle_indices(len(X))
            seen = 0.0
            for b, start in enumerate(range(0, len(X), config.batch_size), start=1):
                idx = order[start:start + config.batch_size]
                if config.parallel_groups > 1:
                    loss, grads = _group_gradients(spec, params, X[idx], Y[idx],
                                                   config.parallel_groups, pool)
                else:
                    loss, grads = batch_gradients(spec, params, X[idx], Y[idx])
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                params, state = adam_step(state, params, grads, lr,
                                          config.beta1, config.beta2, config.adam_eps)
                seen += loss * len(idx)
            train_mse = seen / len(X)
            val_mse = evaluate_loss(spec, params, dataset.val_x, dataset.val_y)
            rec = EpochRecord(epoch, train_mse, val_mse, lr)
            log.append(rec)
            lr = sched.step(train_mse if math.isnan(val_mse) else val_mse, lr)
            if callback is not None and callback(rec):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    ckpt = Checkpoint(spec, dataset.norm, params, dict(extras or {}))
    return ckpt, log
