"""mAP@3 and the grid search over the non-verified sample weight ``r``."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gbdt
from .stacking import MetaMatrix

__all__ = [
    "DEFAULT_R_GRID",
    "EvalReport",
    "GridRow",
    "GridResult",
    "Level2Problem",
    "true_label_ranks",
    "map_at_3",
    "fit_level2",
    "grid_search_r",
]

DEFAULT_R_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class EvalReport:
    map_at_3: float
    per_class: np.ndarray
    n_clips: int

    def to_csv(self, class_names: Optional[Sequence[str]] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "map_at_3"])
        for c, v in enumerate(self.per_class):
            w.writerow([class_names[c] if class_names is not None else c,
                        "" if np.isnan(v) else repr(float(v))])
        w.writerow(["__all__", repr(self.map_at_3)])
        return buf.getvalue()


def true_label_ranks(probs, labels) -> np.ndarray:
    """1-based rank of each true label; ties are ordered by ascending class index."""
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    p_true = P[np.arange(y.size), y][:, None]
    classes = np.arange(P.shape[1])[None, :]
    ahead = (P > p_true) | ((P == p_true) & (classes < y[:, None]))
    return 1 + ahead.sum(axis=1)


def map_at_3(probs, labels, n_classes: Optional[int] = None) -> EvalReport:
    """Mean over clips of ``1/rank`` of the true label within the top 3, else 0.

    ``per_class`` is the same score averaged over the clips of each class
    (NaN for classes with no clips).
    """
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("map_at_3 needs at least one clip")
    if y.shape != (P.shape[0],):
        raise ValueError("need exactly one true label per clip")
    ranks = true_label_ranks(P, y)
    scores = np.where(ranks <= 3, 1.0 / ranks, 0.0)
    C = n_classes or P.shape[1]
    sums = np.bincount(y, weights=scores, minlength=C)
    counts = np.bincount(y, minlength=C)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return EvalReport(float(scores.mean()), per_class, int(y.size))


@dataclass(frozen=True)
class Level2Problem:
    """Frozen level-2 inputs: meta-features never change across grid cells."""

    train: MetaMatrix
    train_labels: np.ndarray
    train_verified: np.ndarray
    holdout: MetaMatrix
    holdout_labels: np.ndarray
    holdout_verified: np.ndarray
    n_classes: int

    def arm(self, with_stats: bool):
        if with_stats:
            return self.train, self.holdout
        return self.train.without_stats(), self.holdout.without_stats()


def fit_level2(problem: Level2Problem, r: float, with_stats: bool, cfg: gbdt.GbdtConfig):
    """Train one level-2 model and score it on the verified holdout clips."""
    train, holdout = problem.arm(with_stats)
    weights = gbdt.compute_weights(problem.train_verified, r)
    model = gbdt.train(train.values, problem.train_labels, weights, cfg, n_classes=problem.n_classes)
    keep = np.asarray(problem.holdout_verified, dtype=bool)
    probs = gbdt.predict(model, holdout.values[keep])
    return model, map_at_3(probs, np.asarray(problem.holdout_labels)[keep], problem.n_classes)


@dataclass(frozen=True)
class GridRow:
    r: float
    with_stats: bool
    map_at_3: float


@dataclass(frozen=True)
class GridResult:
    rows: tuple
    models: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        cells = [(row.r, row.with_stats) for row in self.rows]
        if len(set(cells)) != len(cells):
            raise ValueError("duplicate grid cell")

    @property
    def argmax(self) -> GridRow:
        return self.best()

    def best(self, with_stats: Optional[bool] = None) -> GridRow:
        """Highest mAP@3; the first row in grid order wins ties."""
        rows = [row for row in self.rows if with_stats is None or row.with_stats == with_stats]
        if not rows:
            raise ValueError("no rows for this arm")
        return max(rows, key=lambda row: row.map_at_3)

    def lookup(self, r: float, with_stats: bool) -> GridRow:
        for row in self.rows:
            if row.r == r and row.with_stats == with_stats:
                return row
        raise KeyError((r, with_stats))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "with_stats", "map_at_3"])
        for row in self.rows:
            w.writerow([repr(float(row.r)), int(row.with_stats), repr(float(row.map_at_3))])
        return buf.getvalue()

    def to_table(self) -> str:
        """Plain-text table: one line per r, one column per arm."""
        rs = sorted({row.r for row in self.rows})
        arms = [a for a in (True, False) if any(row.with_stats == a for row in self.rows)]
        heads = {True: "with TF", False: "without TF"}
        best = {a: self.best(a) for a in arms}
        lines = [f"{'r':>5}" + "".join(f"{heads[a]:>14}" for a in arms)]
        for r in rs:
            cells = []
            for a in arms:
                try:
                    row = self.lookup(r, a)
                except KeyError:
                    cells.append(f"{'-':>14}")
                    continue
                mark = "*" if row is best[a] else " "
                cells.append(f"{row.map_at_3:>13.4f}{mark}")
            lines.append(f"{r:>5.1f}" + "".join(cells))
        return "\n".join(lines) + "\n"


def grid_search_r(problem: Level2Problem, grid: Sequence[float] = DEFAULT_R_GRID,
                  cfg: gbdt.GbdtConfig = gbdt.GbdtConfig(), with_and_without_stats: bool = True,
                  keep_models: bool = False) -> GridResult:
    """Retrain only the level-2 model for every ``(r, arm)`` cell."""
    grid = [float(r) for r in grid]
    if not grid:
        raise ValueError("grid must not be empty")
    if len(set(grid)) != len(grid):
        raise ValueError("grid values must be distinct")
    for r in grid:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"grid value {r} outside [0, 1]")
    arms = (True, False) if with_and_without_stats else (True,)
    rows, models = [], {}
    for r in grid:
        for with_stats in arms:
            try:
                model, report = fit_level2(problem, r, with_stats, cfg)
            except ValueError as exc:
                raise ValueError(f"grid cell r={r}, with_stats={with_stats}: {exc}") from exc
            rows.append(GridRow(r, with_stats, report.map_at_3))
            if keep_models:
                models[(r, with_stats)] = model
    return GridResult(tuple(rows), models)
