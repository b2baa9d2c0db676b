"""Mini-batch gradient descent with early stopping, shared by all models."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np

from p2pcredit.exceptions import TrainingDivergedError

PENALTIES = ("l1", "l2")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    class_weighting: str | None = "balanced"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.class_weighting not in (None, "none", "balanced"):
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def penalty_value(weights: Sequence[np.ndarray], penalty: str, alpha: float) -> float:
    if alpha == 0:
        return 0.0
    if penalty == "l2":
        return 0.5 * alpha * sum(float(np.sum(w * w)) for w in weights)
    if penalty == "l1":
        return alpha * sum(float(np.sum(np.abs(w))) for w in weights)
    raise ValueError(f"unknown penalty {penalty!r}")


def penalty_grad(w: np.ndarray, penalty: str, alpha: float) -> np.ndarray:
    """Gradient of the penalty; the L1 subgradient uses sign(0) = 0."""
    if penalty == "l2":
        return alpha * w
    if penalty == "l1":
        return alpha * np.sign(w)
    raise ValueError(f"unknown penalty {penalty!r}")


def _shrink(w: np.ndarray, penalty: str, step: float) -> np.ndarray:
    # Penalty applied as a separate step after the data-gradient step. For
    # L2 this is the implicit decay w / (1 + step); for L1 the subgradient
    # step is clipped at zero. Both stay stable when step >> 1.
    if step == 0:
        return w
    if penalty == "l2":
        return w / (1.0 + step)
    return np.sign(w) * np.maximum(np.abs(w) - step, 0.0)


def run_descent(
    params: list[np.ndarray],
    penalized: Sequence[bool],
    batch_grad: Callable[[list[np.ndarray], np.ndarray, int, int], list[np.ndarray]],
    objective: Callable[[list[np.ndarray]], float],
    val_loss: Callable[[list[np.ndarray]], float],
    n_rows: int,
    config: TrainConfig,
    penalty: str = "l2",
    alpha: float = 0.0,
):
    """Shuffled mini-batch descent; returns ``(best_params, trace)``.

    ``batch_grad`` returns gradients of the *data* loss only; the penalty on
    the ``penalized`` arrays is applied by this loop. Early stopping watches
    ``val_loss`` and the parameters with the lowest value are returned.
    """
    if penalty not in PENALTIES:
        raise ValueError(f"unknown penalty {penalty!r}")
    params = [p.copy() for p in params]
    trace: list[dict] = []
    if config.max_epochs == 0:
        return params, trace
    rng = np.random.default_rng([config.seed, 1])
    lr = config.learning_rate
    best = [p.copy() for p in params]
    best_val = val_loss(params)
    if not np.isfinite(best_val):
        best_val = np.inf
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n_rows)
        for b, start in enumerate(range(0, n_rows, config.batch_size)):
            idx = order[start:start + config.batch_size]
            grads = batch_grad(params, idx, epoch, b)
            with np.errstate(over="ignore", invalid="ignore"):
                for k, (p, g) in enumerate(zip(params, grads)):
                    p -= lr * g
                    if penalized[k]:
                        params[k] = _shrink(p, penalty, lr * alpha)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch, lr, trace)
        train_obj = objective(params)
        current_val = val_loss(params)
        trace.append({"epoch": epoch, "train_loss": train_obj, "val_loss": current_val})
        if not (np.isfinite(train_obj) and np.isfinite(current_val)):
            raise TrainingDivergedError(epoch, lr, trace)
        if current_val < best_val:
            best_val = current_val
            best = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, trace
