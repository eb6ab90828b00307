"""Level-1 base learners: softmax regression and a small tanh MLP.

Both minimise soft-target cross-entropy with minibatch gradient descent so
that mixup targets need no special handling. Inputs are standardised with
statistics of the training set, stored inside the model.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .augment import LabeledBatch, mixup, one_hot

__all__ = [
    "LEARNER_KINDS",
    "INPUT_VIEWS",
    "TrainingError",
    "BaseLearnerSpec",
    "LearnerModel",
    "softmax",
    "init_params",
    "loss_and_grad",
    "train",
    "predict_proba",
    "training_loss",
    "model_to_bytes",
    "model_from_bytes",
]

LEARNER_KINDS = ("softmax_regression", "mlp")
INPUT_VIEWS = ("flattened_logmel", "flattened_mfcc", "stat_vector")
MAGIC = b"TSL1"
VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaseLearnerSpec:
    kind: str = "softmax_regression"
    input_view: str = "flattened_logmel"
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    hidden_sizes: tuple = (32,)
    l2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.input_view not in INPUT_VIEWS:
            raise ValueError(f"unknown input view {self.input_view!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs and l2 >= 0")
        hidden = tuple(int(h) for h in self.hidden_sizes)
        if any(h < 1 for h in hidden):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden_sizes", hidden)

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.input_view}"


@dataclass(frozen=True)
class LearnerModel:
    spec: BaseLearnerSpec
    n_classes: int
    x_mean: np.ndarray
    x_scale: np.ndarray
    params: tuple = field(repr=False)

    @property
    def n_features(self) -> int:
        return self.x_mean.size


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_sizes(spec: BaseLearnerSpec, d: int, c: int) -> list:
    if spec.kind == "softmax_regression":
        return [d, c]
    return [d, *spec.hidden_sizes, c]


def init_params(spec: BaseLearnerSpec, d: int, c: int, rng: np.random.Generator) -> list:
    """Zeros for softmax regression; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for the MLP."""
    sizes = _layer_sizes(spec, d, c)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if spec.kind == "softmax_regression":
            params += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
        else:
            bound = 1.0 / np.sqrt(fan_in)
            params += [rng.uniform(-bound, bound, (fan_in, fan_out)),
                       rng.uniform(-bound, bound, fan_out)]
    return params


def _forward(params, X):
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        h = np.tanh(z) if i < n_layers - 1 else z
        acts.append(h)
    return acts


def loss_and_grad(params, X: np.ndarray, Y: np.ndarray, l2: float = 0.0):
    """Mean soft cross-entropy plus ``l2/2 * sum ||W||^2`` and its gradient."""
    acts = _forward(params, X)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = X.shape[0]
    weights = params[0::2]
    loss = -np.sum(Y * log_p) / n + 0.5 * l2 * sum(np.sum(W * W) for W in weights)
    grads = [None] * len(params)
    delta = (np.exp(log_p) - Y) / n
    for i in range(len(params) // 2 - 1, -1, -1):
        W = params[2 * i]
        grads[2 * i] = acts[i].T @ delta + l2 * W
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ W.T) * (1.0 - acts[i] ** 2)
    return float(loss), grads


def _standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)
    return mean, scale


def _as_targets(y, n_classes: Optional[int]) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 1:
        if n_classes is None:
            n_classes = int(y.max()) + 1
        return one_hot(y, n_classes)
    return y.astype(np.float64)


def train(spec: BaseLearnerSpec, X, y, n_classes: Optional[int] = None,
          mixup_alpha: Optional[float] = None) -> LearnerModel:
    """Fit a base learner on ``X`` with hard labels or soft targets ``y``.

    Each epoch visits a seeded permutation of the rows in minibatches; when
    ``mixup_alpha`` is set every minibatch is mixed before the update.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_targets(y, n_classes)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X must be [n, d] with one target row per sample")
    if np.unique(Y.argmax(axis=1)).size < 2:
        raise TrainingError("training data contains a single class")
    rng = np.random.default_rng(spec.seed)
    mean, scale = _standardizer(X)
    Xs = (X - mean) / scale
    params = init_params(spec, X.shape[1], Y.shape[1], rng)
    n = Xs.shape[0]
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            xb, yb = Xs[idx], Y[idx]
            if mixup_alpha is not None and idx.size >= 2:
                mixed = mixup(LabeledBatch(xb, yb), mixup_alpha, rng)
                xb, yb = mixed.inputs, mixed.targets
            loss, grads = loss_and_grad(params, xb, yb, spec.l2)
            if not np.isfinite(loss):
                raise TrainingError(f"{spec.name}: loss became non-finite in epoch {epoch}")
            for p, g in zip(params, grads):
                p -= spec.learning_rate * g
    for p in params:
        p.setflags(write=False)
    return LearnerModel(spec, Y.shape[1], mean, scale, tuple(params))


def _check_dims(model: LearnerModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got shape {X.shape}")
    return (X - model.x_mean) / model.x_scale


def predict_proba(model: LearnerModel, X) -> np.ndarray:
    return softmax(_forward(model.params, _check_dims(model, X))[-1])


def training_loss(model: LearnerModel, X, y) -> float:
    Y = _as_targets(y, model.n_classes)
    return loss_and_grad(list(model.params), _check_dims(model, X), Y, model.spec.l2)[0]


def model_to_bytes(model: LearnerModel) -> bytes:
    spec = json.dumps(asdict(model.spec), sort_keys=True).encode("utf-8")
    arrays = [model.x_mean, model.x_scale, *model.params]
    out = [MAGIC, struct.pack("<II", VERSION, len(spec)), spec,
           struct.pack("<II", model.n_classes, len(arrays))]
    for a in arrays:
        out.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(out)


def model_from_bytes(data: bytes) -> LearnerModel:
    if data[:4] != MAGIC:
        raise ValueError("not a TSL1 learner file")
    version, spec_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported TSL1 version {version}")
    pos = 12
    spec_dict = json.loads(data[pos:pos + spec_len].decode("utf-8"))
    spec_dict["hidden_sizes"] = tuple(spec_dict["hidden_sizes"])
    pos += spec_len
    n_classes, n_arrays = struct.unpack_from("<II", data, pos)
    pos += 8
    arrays = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        count = int(np.prod(shape))
        a = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        a.setflags(write=False)
        arrays.append(a)
        pos += 8 * count
    return LearnerModel(BaseLearnerSpec(**spec_dict), n_classes, arrays[0], arrays[1], tuple(arrays[2:]))
