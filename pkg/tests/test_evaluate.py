import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagstack import level1
from tagstack.evaluate import GridResult, GridRow, Level2Problem, fit_level2, grid_search_r, map_at_3, true_label_ranks
from tagstack.gbdt import GbdtConfig
from tagstack.stacking import MetaMatrix


def naive_map3(P, y):
    total = 0.0
    for row, label in zip(P, y):
        order = sorted(range(len(row)), key=lambda c: (-row[c], c))
        for pos, c in enumerate(order[:3]):
            if c == label:
                total += 1.0 / (pos + 1)
    return total / len(y)


class TestMap3:
    def test_hand_values(self):
        assert map_at_3(np.eye(4), np.arange(4)).map_at_3 == 1.0
        assert map_at_3([[0.5, 0.3, 0.2]], [1]).map_at_3 == 0.5
        P = [[0.6, 0.3, 0.1, 0.0], [0.4, 0.3, 0.2, 0.1]]
        assert map_at_3(P, [0, 2]).map_at_3 == pytest.approx((1 + 1 / 3) / 2, abs=1e-12)
        assert map_at_3([[0.4, 0.3, 0.2, 0.1]], [3]).map_at_3 == 0.0

    def test_ties_by_class_index(self):
        P = [[0.25, 0.25, 0.25, 0.25]]
        np.testing.assert_array_equal(true_label_ranks(P * 4, [0, 1, 2, 3]), [1, 2, 3, 4])

    def test_against_naive(self):
        rng = np.random.default_rng(0)
        P = np.round(rng.dirichlet(np.ones(6), 500), 2)
        y = rng.integers(0, 6, 500)
        assert map_at_3(P, y).map_at_3 == pytest.approx(naive_map3(P, y), abs=1e-12)

    def test_rank_transform_invariance(self):
        rng = np.random.default_rng(1)
        P = rng.dirichlet(np.ones(8), 1000)
        y = rng.integers(0, 8, 1000)
        base = map_at_3(P, y).map_at_3
        for f in (np.log, np.sqrt, lambda x: 3 * x ** 3 + 1, lambda x: np.exp(5 * x)):
            assert map_at_3(f(P), y).map_at_3 == base

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_partition_weighted_mean(self, seed, parts):
        rng = np.random.default_rng(seed)
        n = 40
        P, y = rng.dirichlet(np.ones(5), n), rng.integers(0, 5, n)
        pieces = np.array_split(rng.permutation(n), parts)
        weighted = sum(map_at_3(P[i], y[i]).map_at_3 * i.size for i in pieces if i.size) / n
        assert weighted == pytest.approx(map_at_3(P, y).map_at_3, abs=1e-12)

    def test_per_class(self):
        rep = map_at_3([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]], [0, 0], n_classes=3)
        np.testing.assert_allclose(rep.per_class[0], 0.75)
        assert np.isnan(rep.per_class[1])
        assert "__all__" in rep.to_csv(["a", "b", "c"])

    def test_errors(self):
        with pytest.raises(ValueError):
            map_at_3(np.zeros((0, 3)), [])
        with pytest.raises(ValueError):
            map_at_3(np.eye(3), [0, 1])


def problem(seed=0, n=90, c=3):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % c
    X = rng.standard_normal((n, 4))
    X[:, 0] += y
    cols = ("a:0", "a:1", "stat:x", "stat:y")
    verified = rng.random(n) < 0.5
    noisy = np.where(verified | (rng.random(n) < 0.6), y, (y + 1) % c)
    hold_y = np.arange(30) % c
    H = rng.standard_normal((30, 4))
    H[:, 0] += hold_y
    return Level2Problem(MetaMatrix(X, cols), noisy, verified, MetaMatrix(H, cols), hold_y,
                         np.arange(30) % 5 != 0, c)


CFG = GbdtConfig(n_rounds=10)


class TestGrid:
    def test_shape_and_roundtrip(self):
        res = grid_search_r(problem(), (0.0, 0.5, 1.0), CFG)
        assert len(res.rows) == 6
        csv_lines = res.to_csv().splitlines()
        assert csv_lines[0] == "r,with_stats,map_at_3" and len(csv_lines) == 7
        assert res.lookup(0.5, True).map_at_3 == fit_level2(problem(), 0.5, True, CFG)[1].map_at_3
        assert "with TF" in res.to_table() and "without TF" in res.to_table()

    def test_single_value(self):
        res = grid_search_r(problem(), [0.4], CFG, with_and_without_stats=False)
        assert res.argmax.r == 0.4

    def test_tie_goes_to_first(self):
        rows = (GridRow(0.0, True, 0.5), GridRow(0.6, True, 0.7), GridRow(1.0, True, 0.7))
        assert GridResult(rows).best(True).r == 0.6
        with pytest.raises(ValueError):
            GridResult(rows + (GridRow(0.0, True, 0.1),))

    def test_evaluates_verified_only(self):
        p = problem()
        model, rep = fit_level2(p, 1.0, True, CFG)
        assert rep.n_clips == int(p.holdout_verified.sum())

    def test_without_stats_drops_columns(self):
        p = problem()
        model, _ = fit_level2(p, 1.0, False, CFG)
        assert model.n_features == 2

    def test_never_touches_level1(self, monkeypatch):
        calls = []
        for name in ("train", "predict_proba"):
            monkeypatch.setattr(level1, name, lambda *a, _n=name, **k: calls.append(_n))
        grid_search_r(problem(), (0.0, 1.0), CFG)
        assert calls == []

    def test_bad_grid(self):
        for grid in ([], [1.5], [0.2, 0.2]):
            with pytest.raises(ValueError):
                grid_search_r(problem(), grid, CFG)

    def test_cell_error_names_cell(self):
        p = problem()
        p = Level2Problem(p.train, np.where(p.train_verified, 0, p.train_labels), p.train_verified,
                          p.holdout, p.holdout_labels, p.holdout_verified, 3)
        with pytest.raises(ValueError, match="r=0.0"):
            grid_search_r(p, (0.0,), CFG)

    def test_deterministic(self):
        a = grid_search_r(problem(), (0.0, 1.0), GbdtConfig(n_rounds=10, seed=3))
        b = grid_search_r(problem(), (0.0, 1.0), GbdtConfig(n_rounds=10, seed=3))
        assert a.to_csv() == b.to_csv()
