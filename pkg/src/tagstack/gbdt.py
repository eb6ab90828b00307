"""Multiclass gradient-boosted decision trees with per-sample weights.

Second-order boosting on softmax cross-entropy. For class ``c`` and sample
``i`` with weight ``w_i``::

    g_i = w_i * (p_ic - y_ic)        h_i = w_i * p_ic * (1 - p_ic)

Splits are found by exact greedy search over presorted feature values. With
``T(G) = sign(G) * max(|G| - l1, 0)``::

    gain = 0.5 * [T(G_L)^2 / (H_L + l2) + T(G_R)^2 / (H_R + l2) - T(G)^2 / (H + l2)]
    leaf = -learning_rate * T(G) / (H + l2)

Rows with zero weight never enter split enumeration or leaf statistics, so
training with ``r = 0`` is exactly training on the verified rows alone.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numba import njit

from .level1 import softmax

__all__ = [
    "GbdtConfig",
    "Tree",
    "GbdtModel",
    "compute_weights",
    "train",
    "predict",
    "predict_raw",
    "weighted_loss",
    "model_to_bytes",
    "model_from_bytes",
    "dump_text",
]

MAGIC = b"TSGB"
VERSION = 1
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class GbdtConfig:
    max_depth: int = 3
    learning_rate: float = 0.03
    n_rounds: int = 500
    feature_subsample: float = 0.7
    row_subsample: float = 0.7
    l1_reg: float = 0.0
    l2_reg: float = 1.0
    min_leaf_weight: float = 1e-3
    seed: int = 0
    early_stopping_rounds: Optional[int] = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        for name in ("feature_subsample", "row_subsample"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.l1_reg < 0 or self.l2_reg < 0 or self.min_leaf_weight < 0:
            raise ValueError("regularisation and min_leaf_weight must be >= 0")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Rows go left on ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def depth(self) -> int:
        depths = np.zeros(self.feature.size, dtype=np.int64)
        for k in range(self.feature.size):
            if self.feature[k] >= 0:
                depths[self.left[k]] = depths[self.right[k]] = depths[k] + 1
        return int(depths.max())


@dataclass(frozen=True)
class GbdtModel:
    base_score: np.ndarray
    trees: tuple  # trees[round][class]
    n_features: int
    config: GbdtConfig

    @property
    def n_classes(self) -> int:
        return self.base_score.size

    @property
    def n_rounds(self) -> int:
        return len(self.trees)


def compute_weights(verified, r: float) -> np.ndarray:
    """1.0 for manually verified clips, ``r`` for the rest.

    ``verified`` may be a boolean array or a :class:`~tagstack.audio_io.Manifest`.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"r must lie in [0, 1], got {r}")
    flags = np.asarray(getattr(verified, "verified", verified), dtype=bool)
    return np.where(flags, 1.0, float(r))


@njit(cache=True)
def _soft_threshold(G, alpha):
    return math.copysign(max(abs(G) - alpha, 0.0), G)


@njit(cache=True)
def _level_splits(sorted_vals, order, feats, node_of, g, h, G, H, lam, alpha, min_leaf):
    """Best split per open node at one depth, scanning each candidate column once.

    Features are scanned in ascending index and thresholds in ascending value;
    a candidate's split score ``T(GL)^2/(HL+lam) + T(GR)^2/(HR+lam)`` must beat
    the incumbent's (initially the parent's) by more than ``TIE_RTOL``
    relative. That realises the (lowest feature, lowest threshold) tie-break
    even when tied scores differ in their last bits. Returns the left-side value
    ``lo`` of each winning split; the caller places the threshold.
    """
    n_nodes = G.shape[0]
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        tg = _soft_threshold(G[k], alpha)
        parent[k] = tg * tg / (H[k] + lam) if H[k] + lam > 0 else 0.0
    target = parent * (1.0 + TIE_RTOL)
    GL = np.empty(n_nodes)
    HL = np.empty(n_nodes)
    last = np.empty(n_nodes)
    count = np.empty(n_nodes, dtype=np.int64)
    n = order.shape[1]
    for f in feats:
        GL[:] = 0.0
        HL[:] = 0.0
        count[:] = 0
        for j in range(n):
            i = order[f, j]
            k = node_of[i]
            if k < 0:
                continue
            v = sorted_vals[f, j]
            if count[k] > 0 and v > last[k]:
                hl = HL[k]
                hr = H[k] - hl
                a = hl + lam
                b = hr + lam
                if hl >= min_leaf and hr >= min_leaf and a > 0 and b > 0:
                    tl = _soft_threshold(GL[k], alpha)
                    tr = _soft_threshold(G[k] - GL[k], alpha)
                    # tl^2/a + tr^2/b > target, without dividing on the common path
                    if tl * tl * b + tr * tr * a > target[k] * (a * b):
                        score = tl * tl / a + tr * tr / b
                        best_gain[k] = 0.5 * (score - parent[k])
                        target[k] = score * (1.0 + TIE_RTOL)
                        best_feat[k] = f
                        best_thr[k] = last[k]
            GL[k] += g[i]
            HL[k] += h[i]
            count[k] += 1
            last[k] = v
    return best_feat, best_thr, best_gain


@njit(cache=True)
def _node_sums(node_of, g, h, n_nodes):
    G = np.zeros(n_nodes)
    H = np.zeros(n_nodes)
    for i in range(node_of.shape[0]):
        k = node_of[i]
        if k >= 0:
            G[k] += g[i]
            H[k] += h[i]
    return G, H


@njit(cache=True)
def _tree_apply(X, feature, threshold, left, right, value, out):
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] += value[k]


def _leaf_value(G: float, H: float, cfg: GbdtConfig) -> float:
    denom = H + cfg.l2_reg
    if denom <= 0:
        return 0.0
    t = np.sign(G) * max(abs(G) - cfg.l1_reg, 0.0)
    return -cfg.learning_rate * t / denom


def _midpoint(lo: float, column: np.ndarray) -> float:
    """Midpoint between ``lo`` and the next larger value in ``column`` (sorted)."""
    hi = column[np.searchsorted(column, lo, side="right")]
    thr = lo + (hi - lo) * 0.5
    return thr if thr < hi else lo


def _grow_tree(X, order, sorted_vals, feats, active, g, h, cfg: GbdtConfig, support) -> Tree:
    """Depth-wise growth; ``active`` flags the rows allowed to shape the tree.

    Thresholds bisect consecutive values of ``support`` (the sorted columns of
    every positive-weight row), so no such row ever sits between a split's
    neighbours and routing is unchanged by monotone feature transforms.
    """
    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node():
        for arr, fill in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1),
                          (value, 0.0), (gain, 0.0)):
            arr.append(fill)
        return len(feature) - 1

    node_of = np.where(active, 0, -1).astype(np.int64)
    open_nodes = [new_node()]  # tree node id of each slot in node_of
    for depth in range(cfg.max_depth + 1):
        G, H = _node_sums(node_of, g, h, len(open_nodes))
        if depth == cfg.max_depth:
            bf = np.full(len(open_nodes), -1)
        else:
            bf, bt, bg = _level_splits(sorted_vals, order, feats, node_of, g, h, G, H,
                                       cfg.l2_reg, cfg.l1_reg, cfg.min_leaf_weight)
        next_open = []
        remap = np.full(len(open_nodes) + 1, -1, dtype=np.int64)  # slot -> (left slot); right = left + 1
        for slot, node in enumerate(open_nodes):
            if bf[slot] < 0:
                value[node] = _leaf_value(G[slot], H[slot], cfg)
                continue
            feature[node] = int(bf[slot])
            threshold[node] = _midpoint(float(bt[slot]), support[bf[slot]])
            gain[node] = float(bg[slot])
            left[node] = new_node()
            right[node] = new_node()
            remap[slot] = len(next_open)
            next_open += [left[node], right[node]]
        if not next_open:
            break
        rows = np.flatnonzero(node_of >= 0)
        slots = node_of[rows]
        base = remap[slots]
        keep = base >= 0
        rows, slots, base = rows[keep], slots[keep], base[keep]
        node_feat = np.array([feature[open_nodes[s]] for s in range(len(open_nodes))])
        node_thr = np.array([threshold[open_nodes[s]] for s in range(len(open_nodes))])
        go_right = X[rows, node_feat[slots]] > node_thr[slots]
        node_of = np.full_like(node_of, -1)
        node_of[rows] = base + go_right
        open_nodes = next_open
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64), np.array(gain, dtype=np.float64))


def _apply(tree: Tree, X: np.ndarray, out: np.ndarray) -> None:
    _tree_apply(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, out)


def _check_matrix(X, n_features=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"model expects {n_features} columns, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    return X


def _weighted_ce(scores, Y, w) -> float:
    z = scores - scores.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.sum(w * np.sum(Y * log_p, axis=1)))


def train(X, labels, weights, cfg: GbdtConfig = GbdtConfig(), n_classes: Optional[int] = None,
          eval_set: Optional[tuple] = None) -> GbdtModel:
    """Fit the boosted ensemble; ``eval_set=(X_val, y_val)`` enables early stopping."""
    X = _check_matrix(X)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    n, n_feat = X.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("labels and weights need one entry per row")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    if C < 2:
        raise ValueError("need at least 2 classes")
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0
    class_weight = (w[:, None] * Y).sum(axis=0)
    if np.count_nonzero(class_weight) < 2:
        raise ValueError("degenerate training set: fewer than 2 classes carry weight")
    missing = np.flatnonzero(class_weight <= 0)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} have no positive-weight sample")
    base = np.log(class_weight / class_weight.sum())

    rng = np.random.default_rng(cfg.seed)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    sorted_vals = np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))
    n_cand = max(1, int(round(cfg.feature_subsample * n_feat)))
    positive = w > 0
    support = sorted_vals[positive[order]].reshape(n_feat, int(positive.sum()))
    scores = np.tile(base, (n, 1))
    if eval_set is not None:
        X_val = _check_matrix(eval_set[0], n_feat)
        y_val = np.asarray(eval_set[1], dtype=np.int64)
        Y_val = np.zeros((y_val.size, C))
        Y_val[np.arange(y_val.size), y_val] = 1.0
        val_scores = np.tile(base, (y_val.size, 1))
        best_loss, best_round = _weighted_ce(val_scores, Y_val, 1.0), 0

    rounds = []
    for rnd in range(cfg.n_rounds):
        active = positive
        if cfg.row_subsample < 1.0:
            active = positive & (rng.random(n) < cfg.row_subsample)
        keep = active[order]
        m = int(active.sum())
        r_order = np.ascontiguousarray(order[keep].reshape(n_feat, m))
        r_vals = np.ascontiguousarray(sorted_vals[keep].reshape(n_feat, m))
        p = softmax(scores)
        trees = []
        for c in range(C):
            if cfg.feature_subsample < 1.0:
                feats = np.sort(rng.choice(n_feat, size=n_cand, replace=False))
            else:
                feats = np.arange(n_feat)
            pc = p[:, c]
            g = w * (pc - Y[:, c])
            h = w * pc * (1.0 - pc)
            trees.append(_grow_tree(X, r_order, r_vals, feats, active, g, h, cfg, support))
        for c, tree in enumerate(trees):
            _apply(tree, X, scores[:, c])
        rounds.append(tuple(trees))
        if eval_set is not None:
            for c, tree in enumerate(trees):
                _apply(tree, X_val, val_scores[:, c])
            loss = _weighted_ce(val_scores, Y_val, 1.0)
            if loss < best_loss:
                best_loss, best_round = loss, rnd + 1
            elif rnd + 1 - best_round >= (cfg.early_stopping_rounds or cfg.n_rounds + 1):
                break
    if eval_set is not None and cfg.early_stopping_rounds is not None:
        rounds = rounds[:best_round]
    base.setflags(write=False)
    return GbdtModel(base, tuple(rounds), n_feat, cfg)


def predict_raw(model: GbdtModel, X) -> np.ndarray:
    X = _check_matrix(X, model.n_features)
    scores = np.tile(model.base_score, (X.shape[0], 1))
    for trees in model.trees:
        for c, tree in enumerate(trees):
            _apply(tree, X, scores[:, c])
    return scores


def predict(model: GbdtModel, X) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return softmax(predict_raw(model, X))


def weighted_loss(model: GbdtModel, X, labels, weights) -> float:
    """Weighted training objective without the regulariser."""
    y = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((y.size, model.n_classes))
    Y[np.arange(y.size), y] = 1.0
    return _weighted_ce(predict_raw(model, X), Y, np.asarray(weights, dtype=np.float64))


def model_to_bytes(model: GbdtModel) -> bytes:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg,
           struct.pack("<III", model.n_classes, model.n_features, model.n_rounds),
           model.base_score.astype("<f8").tobytes()]
    for trees in model.trees:
        for t in trees:
            out.append(struct.pack("<I", t.feature.size))
            out.append(t.feature.astype("<i4").tobytes())
            out.append(t.threshold.astype("<f8").tobytes())
            out.append(t.left.astype("<i4").tobytes())
            out.append(t.right.astype("<i4").tobytes())
            out.append(t.value.astype("<f8").tobytes())
            out.append(t.gain.astype("<f8").tobytes())
    return b"".join(out)


def model_from_bytes(data: bytes) -> GbdtModel:
    if data[:4] != MAGIC:
        raise ValueError("not a TSGB model file")
    version, cfg_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported TSGB version {version}")
    pos = 12
    cfg = GbdtConfig(**json.loads(data[pos:pos + cfg_len].decode("utf-8")))
    pos += cfg_len
    n_classes, n_features, n_rounds = struct.unpack_from("<III", data, pos)
    pos += 12

    def take(dtype, count):
        nonlocal pos
        a = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += a.nbytes
        return a

    base = take("<f8", n_classes).astype(np.float64)
    rounds = []
    for _ in range(n_rounds):
        trees = []
        for _ in range(n_classes):
            (m,) = struct.unpack_from("<I", data, pos)
            pos += 4
            trees.append(Tree(take("<i4", m).astype(np.int64), take("<f8", m).astype(np.float64),
                              take("<i4", m).astype(np.int64), take("<i4", m).astype(np.int64),
                              take("<f8", m).astype(np.float64), take("<f8", m).astype(np.float64)))
        rounds.append(tuple(trees))
    return GbdtModel(base, tuple(rounds), n_features, cfg)


def dump_text(model: GbdtModel, feature_names=None) -> str:
    def name(f):
        return feature_names[f] if feature_names is not None else f"f{f}"

    lines = [f"base_score: {' '.join(f'{b:.10g}' for b in model.base_score)}"]
    for rnd, trees in enumerate(model.trees):
        for c, t in enumerate(trees):
            lines.append(f"booster[round={rnd},class={c}]:")
            stack = [(0, 0)]
            while stack:
                k, d = stack.pop()
                pad = "\t" * d
                if t.feature[k] < 0:
                    lines.append(f"{pad}{k}:leaf={t.value[k]:.10g}")
                else:
                    lines.append(f"{pad}{k}:[{name(t.feature[k])}<={t.threshold[k]:.10g}] "
                                 f"yes={t.left[k]},no={t.right[k]},gain={t.gain[k]:.6g}")
                    stack += [(t.right[k], d + 1), (t.left[k], d + 1)]
    return "\n".join(lines) + "\n"
