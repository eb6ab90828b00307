"""Out-of-fold meta-features for the level-2 model.

Folds are assigned per clip, so every segment of a clip lands in the same
fold and no fold model ever sees any part of the clips it predicts.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import level1

__all__ = [
    "FoldAssignment",
    "ClipFeatures",
    "MetaBlock",
    "MetaMatrix",
    "assign_folds",
    "derive_seed",
    "oof_predictions",
    "aggregate_to_clip",
    "audit_oof",
    "build_meta_features",
]


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int
    seed: int

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)


def assign_folds(labels, k: int = 5, seed: int = 0, class_names: Optional[Sequence[str]] = None
                 ) -> FoldAssignment:
    """Stratified, seeded split of clips into ``k`` folds.

    ``labels`` holds class indices, or is a Manifest. Each class is shuffled
    and dealt round-robin; deals start where the previous class stopped so
    fold sizes also stay within one of each other.
    """
    if hasattr(labels, "labels"):
        class_names = labels.class_list
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.full(labels.size, -1, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            name = class_names[c] if class_names is not None else c
            raise ValueError(f"class {name!r} has {members.size} clips, fewer than k={k} folds")
        members = rng.permutation(members)
        fold_of[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return FoldAssignment(fold_of, k, seed)


@dataclass(frozen=True)
class ClipFeatures:
    """Segment-level inputs for one view; ``segment_clip[j]`` is the clip of row ``j``."""

    inputs: np.ndarray
    segment_clip: np.ndarray
    n_clips: int

    @classmethod
    def one_per_clip(cls, inputs) -> "ClipFeatures":
        inputs = np.asarray(inputs)
        return cls(inputs, np.arange(inputs.shape[0]), inputs.shape[0])

    def rows_for(self, clips) -> np.ndarray:
        return np.flatnonzero(np.isin(self.segment_clip, clips))


@dataclass(frozen=True)
class MetaBlock:
    """OOF and holdout probabilities of one learner.

    ``model_train_clips[f]`` lists the clips fold model ``f`` trained on;
    index ``k`` is the full-data model that predicts the holdout set.
    """

    learner_id: str
    oof_probs: np.ndarray
    holdout_probs: np.ndarray
    provenance: np.ndarray
    model_train_clips: tuple
    models: tuple = field(default=(), repr=False, compare=False)


def derive_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def aggregate_to_clip(segment_probs, clip_ids, n_clips: Optional[int] = None,
                      method: str = "mean") -> np.ndarray:
    """Average segment probability rows per clip, then renormalise."""
    P = np.asarray(segment_probs, dtype=np.float64)
    clip_ids = np.asarray(clip_ids, dtype=np.int64)
    if clip_ids.shape != (P.shape[0],):
        raise ValueError("need one clip id per segment row")
    n_clips = int(clip_ids.max()) + 1 if n_clips is None else n_clips
    counts = np.bincount(clip_ids, minlength=n_clips)
    if np.any(counts == 0):
        raise ValueError(f"clip {int(np.argmin(counts))} has no segments")
    if method == "mean":
        rows = P
    elif method == "geometric":
        rows = np.log(np.maximum(P, 1e-300))
    else:
        raise ValueError(f"unknown aggregation {method!r}")
    out = np.zeros((n_clips, P.shape[1]))
    np.add.at(out, clip_ids, rows)
    out /= counts[:, None]
    if method == "geometric":
        out = np.exp(out)
    return out / out.sum(axis=1, keepdims=True)


def oof_predictions(spec: level1.BaseLearnerSpec, train: ClipFeatures, labels, folds: FoldAssignment,
                    holdout: Optional[ClipFeatures] = None, n_classes: Optional[int] = None,
                    mixup_alpha: Optional[float] = None, aggregation: str = "mean",
                    fit: Callable = None, predict: Callable = None,
                    learner_id: Optional[str] = None) -> MetaBlock:
    """Train ``k`` fold models plus one full model for a single learner spec.

    Fold model ``f`` trains on every clip outside fold ``f`` and predicts
    fold ``f``; the full model predicts ``holdout``.
    """
    fit = fit or level1.train
    predict = predict or level1.predict_proba
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != train.n_clips or folds.fold_of.size != train.n_clips:
        raise ValueError("labels and folds must cover every training clip")
    C = int(n_classes if n_classes is not None else labels.max() + 1)
    seg_labels = labels[train.segment_clip]

    def fit_on(clips, fold):
        rows = train.rows_for(clips)
        fold_spec = replace(spec, seed=derive_seed(spec.seed, fold))
        try:
            return fit(fold_spec, train.inputs[rows], seg_labels[rows], n_classes=C,
                       mixup_alpha=mixup_alpha)
        except (ValueError, level1.TrainingError) as exc:
            where = "full model" if fold == folds.k else f"fold {fold}"
            raise level1.TrainingError(f"{spec.name}, {where}: {exc}") from exc

    oof_seg = np.zeros((train.inputs.shape[0], C))
    provenance = np.full(train.n_clips, -1, dtype=np.int64)
    model_clips, models = [], []
    for f in range(folds.k):
        held = folds.members(f)
        fit_clips = np.flatnonzero(folds.fold_of != f)
        model = fit_on(fit_clips, f)
        rows = train.rows_for(held)
        oof_seg[rows] = predict(model, train.inputs[rows])
        provenance[held] = f
        model_clips.append(fit_clips)
        models.append(model)
    oof = aggregate_to_clip(oof_seg, train.segment_clip, train.n_clips, aggregation)

    full_clips = np.arange(train.n_clips)
    full = fit_on(full_clips, folds.k)
    model_clips.append(full_clips)
    models.append(full)
    if holdout is not None:
        hold = aggregate_to_clip(predict(full, holdout.inputs), holdout.segment_clip,
                                 holdout.n_clips, aggregation)
    else:
        hold = np.zeros((0, C))
    return MetaBlock(learner_id or spec.name, oof, hold, provenance, tuple(model_clips), tuple(models))


def audit_oof(block: MetaBlock, folds: FoldAssignment) -> list:
    """Return human-readable purity violations; an empty list means the block is clean."""
    problems = []
    if block.provenance.size != folds.fold_of.size:
        return [f"{block.learner_id}: provenance covers {block.provenance.size} clips, "
                f"folds cover {folds.fold_of.size}"]
    if len(block.model_train_clips) != folds.k + 1:
        problems.append(f"{block.learner_id}: expected {folds.k + 1} models, "
                        f"found {len(block.model_train_clips)}")
    for clip, (src, fold) in enumerate(zip(block.provenance, folds.fold_of)):
        if src != fold:
            problems.append(f"{block.learner_id}: clip {clip} predicted by fold {src}, assigned fold {fold}")
        elif 0 <= src < len(block.model_train_clips) and np.isin(clip, block.model_train_clips[src]):
            problems.append(f"{block.learner_id}: clip {clip} was in the training set of fold model {src}")
    return problems


@dataclass(frozen=True)
class MetaMatrix:
    values: np.ndarray
    columns: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != len(self.columns):
            raise ValueError("column descriptors do not match the matrix width")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def stat_mask(self) -> np.ndarray:
        return np.array([c.startswith("stat:") for c in self.columns])

    def without_stats(self) -> "MetaMatrix":
        keep = ~self.stat_mask
        return MetaMatrix(self.values[:, keep], tuple(c for c, k in zip(self.columns, keep) if k))


def build_meta_features(blocks: Sequence[MetaBlock], train_stats=None, holdout_stats=None,
                        include_stats: bool = True, class_names: Optional[Sequence[str]] = None,
                        stat_layout: Optional[Sequence[str]] = None):
    """Concatenate learner probability blocks and (optionally) clip statistics.

    Column order: ``[learner_1 classes..., learner_2 classes..., stat slots...]``.
    """
    if not blocks:
        raise ValueError("need at least one meta block")
    n_train, n_hold = blocks[0].oof_probs.shape[0], blocks[0].holdout_probs.shape[0]
    columns, tr, ho = [], [], []
    for b in blocks:
        if b.oof_probs.shape[0] != n_train or b.holdout_probs.shape[0] != n_hold:
            raise ValueError(f"block {b.learner_id} covers a different clip set")
        C = b.oof_probs.shape[1]
        names = class_names if class_names is not None else [str(c) for c in range(C)]
        columns += [f"{b.learner_id}:{name}" for name in names]
        tr.append(b.oof_probs)
        ho.append(b.holdout_probs)
    if include_stats:
        if train_stats is None or holdout_stats is None:
            raise ValueError("include_stats needs train and holdout statistics")
        train_stats = np.asarray(train_stats, dtype=np.float64)
        holdout_stats = np.asarray(holdout_stats, dtype=np.float64).reshape(-1, train_stats.shape[1])
        if train_stats.shape[0] != n_train or holdout_stats.shape[0] != n_hold:
            raise ValueError("statistics cover a different clip set than the meta blocks")
        layout = stat_layout or [str(j) for j in range(train_stats.shape[1])]
        columns += [f"stat:{s}" for s in layout]
        tr.append(train_stats)
        ho.append(holdout_stats)
    return MetaMatrix(np.hstack(tr), columns), MetaMatrix(np.hstack(ho), columns)
