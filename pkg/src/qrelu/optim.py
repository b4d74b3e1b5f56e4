"""Minibatch SGD with Nesterov momentum and stepwise learning-rate decay."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .nn import MlpModel, ShapeError, as_matrix, backward, forward


@dataclass
class TrainConfig:
    """Training hyperparameters.

    The effective batch size is min(batch_size, n).  The learning rate is
    lr0 * decay_factor ** (epoch // decay_every).
    """

    epochs: int = 200
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    decay_factor: float = 0.5
    decay_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0.0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Stepwise-decayed rate for a zero-based epoch index."""
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def nesterov_step(theta, velocity, grad, lr: float, mu: float):
    """One momentum-lookahead update; returns (theta', velocity').

    v' = mu * v - lr * g
    theta' = theta + mu * v' - lr * g
    """
    theta = np.asarray(theta, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != velocity.shape or theta.shape != grad.shape:
        raise ShapeError(
            f"shape mismatch: theta {theta.shape}, velocity {velocity.shape}, "
            f"grad {grad.shape}"
        )
    v_new = mu * velocity - lr * grad
    return theta + mu * v_new - lr * grad, v_new


def train(model: MlpModel, x, y, objective, cfg: TrainConfig):
    """Fit the model in place; returns (model, per-epoch mean training loss).

    Each epoch visits a seeded random permutation in minibatches.  Batches
    of size 1 are skipped when the model contains batchnorm.  The model is
    left in eval mode.  Fully deterministic given cfg.seed.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n = x.shape[0]
    if n == 0:
        raise ValueError("training dataset is empty")
    if y.shape[0] != n:
        raise ShapeError(f"x has {n} rows but y has {y.shape[0]}")
    if model.has_batchnorm and min(cfg.batch_size, n) < 2:
        raise ValueError("batch_size must be >= 2 when the model contains batchnorm")

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    velocity = {key: np.zeros_like(p) for key, p in params.items()}
    batch = min(cfg.batch_size, n)
    skip_singletons = model.has_batchnorm

    history = []
    model.train_mode()
    try:
        for epoch in range(cfg.epochs):
            lr = learning_rate(cfg, epoch)
            order = rng.permutation(n)
            total = 0.0
            used = 0
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                if skip_singletons and idx.size < 2:
                    continue
                out, caches = forward(model, x[idx], rng)
                loss, dloss = objective(y[idx], out)
                grads = backward(model, caches, dloss)
                for key, p in params.items():
                    p_new, v_new = nesterov_step(p, velocity[key], grads[key], lr, cfg.momentum)
                    np.copyto(p, p_new)
                    np.copyto(velocity[key], v_new)
                total += loss * idx.size
                used += idx.size
            history.append(total / max(used, 1))
    finally:
        model.eval_mode()
    return model, history


def timed_train(model, x, y, objective, cfg):
    """train() plus wall-clock milliseconds, for benchmark records."""
    start = time.perf_counter()
    model, history = train(model, x, y, objective, cfg)
    return model, history, (time.perf_counter() - start) * 1000.0
