import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagstack.level1 import BaseLearnerSpec, TrainingError, predict_proba, train
from tagstack.stacking import (ClipFeatures, MetaBlock, MetaMatrix, aggregate_to_clip, assign_folds,
                               audit_oof, build_meta_features, derive_seed, oof_predictions)

SPEC = BaseLearnerSpec("softmax_regression", "stat_vector", learning_rate=0.1, epochs=5, seed=3)


def toy(n_per=10, c=3, d=4, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(c), n_per)
    X = rng.standard_normal((y.size, d)) + y[:, None]
    return X, y


class TestFolds:
    def test_stratified(self):
        folds = assign_folds(np.repeat([0, 1], 5), k=5, seed=0)
        for f in range(5):
            assert sorted(np.repeat([0, 1], 5)[folds.members(f)]) == [0, 1]

    @settings(max_examples=30)
    @given(st.lists(st.integers(0, 3), min_size=20, max_size=80), st.integers(0, 1000))
    def test_balance(self, labels, seed):
        labels = np.array(labels)
        if np.bincount(labels).min() < 5 or np.unique(labels).size < 4:
            return
        folds = assign_folds(labels, 5, seed)
        sizes = np.bincount(folds.fold_of, minlength=5)
        assert sizes.max() - sizes.min() <= 1
        for c in np.unique(labels):
            per = np.bincount(folds.fold_of[labels == c], minlength=5)
            assert per.max() - per.min() <= 1

    def test_deterministic_and_error(self):
        y = np.repeat([0, 1, 2], 7)
        np.testing.assert_array_equal(assign_folds(y, 5, 4).fold_of, assign_folds(y, 5, 4).fold_of)
        with pytest.raises(ValueError, match="fewer than k"):
            assign_folds(np.array([0] * 10 + [1] * 4), 5, 0, class_names=["a", "b"])


class TestAggregate:
    def test_identity_and_mean(self):
        P = np.array([[0.2, 0.8], [0.6, 0.4]])
        np.testing.assert_array_equal(aggregate_to_clip(P, [0, 1]), P)
        np.testing.assert_allclose(aggregate_to_clip(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 0]), [[0.5, 0.5]])

    def test_geometric(self):
        P = np.array([[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]])
        np.testing.assert_allclose(aggregate_to_clip(P, [0, 0, 1], method="geometric"), [[0.5, 0.5], [0.5, 0.5]])

    def test_missing_clip(self):
        with pytest.raises(ValueError):
            aggregate_to_clip(np.ones((2, 2)) / 2, [0, 2], n_clips=3)


class TestOof:
    def test_six_models_and_provenance(self):
        X, y = toy()
        folds = assign_folds(y, 5, 1)
        hold = ClipFeatures.one_per_clip(X[:4])
        block = oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y, folds, hold)
        assert len(block.models) == 6 and len(block.model_train_clips) == 6
        np.testing.assert_array_equal(block.provenance, folds.fold_of)
        assert audit_oof(block, folds) == []
        np.testing.assert_allclose(block.oof_probs.sum(axis=1), 1.0)
        np.testing.assert_allclose(block.holdout_probs, predict_proba(block.models[-1], X[:4]), rtol=0, atol=1e-15)
        for f in range(5):
            rows = folds.members(f)
            np.testing.assert_allclose(block.oof_probs[rows], predict_proba(block.models[f], X[rows]), rtol=0, atol=1e-15)

    def test_label_permutation_outside_fold(self):
        """Fold-f OOF rows depend only on clips outside fold f; permuting labels inside f changes nothing."""
        X, y = toy(seed=2)
        folds = assign_folds(y, 5, 0)
        base = oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y, folds)
        rng = np.random.default_rng(0)
        for f in range(5):
            y2 = y.copy()
            inside = folds.members(f)
            y2[inside] = rng.permutation(3)[y2[inside]]
            other = oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y2, folds)
            np.testing.assert_array_equal(other.oof_probs[inside], base.oof_probs[inside])

    def test_segments_aggregate(self):
        X, y = toy()
        Xs = np.repeat(X, 2, axis=0) + np.random.default_rng(0).normal(0, 0.01, (2 * X.shape[0], X.shape[1]))
        feats = ClipFeatures(Xs, np.repeat(np.arange(X.shape[0]), 2), X.shape[0])
        block = oof_predictions(SPEC, feats, y, assign_folds(y, 5, 0))
        assert block.oof_probs.shape == (X.shape[0], 3)

    def test_fit_receives_fold_seed(self):
        X, y = toy()
        seen = []

        def fit(spec, Xf, yf, n_classes=None, mixup_alpha=None):
            seen.append(spec.seed)
            return train(spec, Xf, yf, n_classes)

        oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y, assign_folds(y, 5, 0), fit=fit)
        assert seen == [derive_seed(SPEC.seed, f) for f in range(6)]
        assert len(set(seen)) == 6

    def test_error_carries_fold(self):
        X, y = toy()

        def fit(spec, *a, **k):
            raise TrainingError("boom")

        with pytest.raises(TrainingError, match="fold 0"):
            oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y, assign_folds(y, 5, 0), fit=fit)

    def test_audit_detects_leak(self):
        X, y = toy()
        folds = assign_folds(y, 5, 0)
        block = oof_predictions(SPEC, ClipFeatures.one_per_clip(X), y, folds)
        leaky = MetaBlock(block.learner_id, block.oof_probs, block.holdout_probs, block.provenance,
                          (np.arange(y.size),) + block.model_train_clips[1:])
        problems = audit_oof(leaky, folds)
        assert problems and all("fold model 0" in p for p in problems)
        wrong = MetaBlock("x", block.oof_probs, block.holdout_probs, (block.provenance + 1) % 5,
                          block.model_train_clips)
        assert len(audit_oof(wrong, folds)) == y.size


class TestMetaMatrix:
    def _block(self, lid, n, h, c):
        return MetaBlock(lid, np.full((n, c), 1 / c), np.full((h, c), 1 / c), np.zeros(n, int), ())

    def test_column_counts(self):
        blocks = [self._block("a", 5, 2, 41), self._block("b", 5, 2, 41)]
        tr, ho = build_meta_features(blocks, np.zeros((5, 246)), np.zeros((2, 246)), True)
        assert len(tr.columns) == 328 and tr.columns == ho.columns
        assert tr.without_stats().values.shape == (5, 82)
        tr2, _ = build_meta_features(blocks, include_stats=False)
        assert tr2.columns == tr.without_stats().columns
        assert tr.columns[0] == "a:0" and tr.columns[41] == "b:0" and tr.columns[82] == "stat:0"

    def test_mismatch(self):
        with pytest.raises(ValueError):
            build_meta_features([self._block("a", 5, 2, 3), self._block("b", 4, 2, 3)], include_stats=False)
        with pytest.raises(ValueError):
            build_meta_features([self._block("a", 5, 2, 3)], np.zeros((4, 6)), np.zeros((2, 6)))
        with pytest.raises(ValueError):
            MetaMatrix(np.zeros((2, 3)), ("a", "b"))
