"""Mixup for level-1 training batches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["LabeledBatch", "mixup", "one_hot"]


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class LabeledBatch:
    """``inputs`` is ``[n, ...]``; ``targets`` is ``[n, n_classes]`` soft labels."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if y.ndim != 2 or np.any(y < 0) or not np.allclose(y.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("targets must be non-negative rows summing to 1")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]


def mixup(batch: LabeledBatch, alpha: float, rng: np.random.Generator,
          lam: Optional[np.ndarray] = None) -> LabeledBatch:
    """Convex combinations ``lam * x_i + (1 - lam) * x_perm(i)``.

    One ``lam ~ Beta(alpha, alpha)`` is drawn per item. ``lam`` overrides the
    draw (scalar or per-item array), for testing the endpoints.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("mixup needs a batch of at least 2 items")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    perm = rng.permutation(n)
    draws = rng.beta(alpha, alpha, size=n)
    if lam is not None:
        draws = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    lx = draws.reshape((n,) + (1,) * (batch.inputs.ndim - 1))
    other = batch.inputs[perm]
    x = lx * batch.inputs + (1.0 - lx) * other
    # rounding must not leave the parents' interval
    x = np.clip(x, np.minimum(batch.inputs, other), np.maximum(batch.inputs, other))
    ly = draws[:, None]
    y = ly * batch.targets + (1.0 - ly) * batch.targets[perm]
    return LabeledBatch(x, y)
