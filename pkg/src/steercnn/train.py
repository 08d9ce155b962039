"""Plain mini-batch gradient descent on softmax cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .steer import SteerableNetwork

__all__ = ["TrainingError", "TrainResult", "softmax_xent", "train", "accuracy"]


class TrainingError(RuntimeError):
    pass


def softmax_xent(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the scores."""
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = scores.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)  # mean training loss per epoch


def train(
    net: SteerableNetwork,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float = 0.05,
    batch: int = 16,
    seed: int = 0,
    log=None,
) -> TrainResult:
    """Updates ``net.params`` in place; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch):
            idx = order[start : start + batch]
            cache: dict = {}
            scores = net.forward(x[idx], cache)
            loss, dscores = softmax_xent(scores, y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            grads = net.backward(cache, dscores)
            for k, g in grads.items():
                net.params[k] -= lr * g
            total += loss * len(idx)
        losses.append(total / len(x))
        if log is not None:
            log(f"epoch {epoch + 1}: loss {losses[-1]:.6f}")
    return TrainResult({k: v.copy() for k, v in net.params.items()}, losses)


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == labels))
