import numpy as np
import pytest

from cellscreen.learners import feature_importances
from cellscreen.learners.common import LearnerError
from cellscreen.learners.forest import (
    _best_split,
    _resolve_max_features,
    fit_random_forest,
)


def _step_problem(n=200, seed=0, threshold=0.3):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 3))
    y = np.where(X[:, 0] > threshold, 2.0, -1.0)
    return X, y, ["a", "b", "c"]


class TestBestSplit:
    def test_finds_exact_step(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 0.0, 5.0, 5.0])
        f, thr, gain = _best_split(X, y, np.arange(4), [0], min_leaf=1)
        assert f == 0
        assert thr == pytest.approx(1.5)
        assert gain > 0

    def test_constant_target_no_split(self):
        X = np.arange(6.0).reshape(-1, 1)
        y = np.full(6, 2.0)
        assert _best_split(X, y, np.arange(6), [0], min_leaf=1) is None

    def test_constant_feature_no_split(self):
        X = np.ones((6, 1))
        y = np.arange(6.0)
        assert _best_split(X, y, np.arange(6), [0], min_leaf=1) is None

    def test_min_leaf_limits_positions(self):
        X = np.arange(6.0).reshape(-1, 1)
        y = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 10.0])
        # the natural split (5 | 1) is forbidden with min_leaf=2
        f, thr, gain = _best_split(X, y, np.arange(6), [0], min_leaf=2)
        assert thr == pytest.approx(3.5)


class TestMaxFeatures:
    def test_resolution(self):
        assert _resolve_max_features("sqrt", 9) == 3
        assert _resolve_max_features(0.25, 8) == 2
        assert _resolve_max_features(1.0, 5) == 5
        assert _resolve_max_features(0.01, 5) == 1  # never below one feature

    def test_bad_fraction(self):
        with pytest.raises(LearnerError):
            _resolve_max_features(1.5, 4)


class TestForest:
    def test_recovers_planted_step(self):
        X, y, cols = _step_problem()
        model = fit_random_forest(X, cols, y, n_trees=50, max_features=1.0)
        grid = np.column_stack([np.linspace(-1, 1, 401), np.zeros(401), np.zeros(401)])
        pred = model.predict(grid, cols)
        crossing = grid[np.argmin(np.abs(pred - 0.5)), 0]
        assert abs(crossing - 0.3) < 0.05

    def test_importances_concentrate_on_signal(self):
        X, y, cols = _step_problem(seed=2)
        model = fit_random_forest(X, cols, y, n_trees=30)
        imp = feature_importances(model)
        assert imp["a"] > 0.9
        assert sum(imp.values()) == pytest.approx(1.0)

    def test_prediction_is_mean_of_trees(self):
        X, y, cols = _step_problem(n=50, seed=1)
        model = fit_random_forest(X, cols, y, n_trees=7)
        stacked = np.stack([t.predict(X) for t in model.trees])
        np.testing.assert_allclose(model.predict(X, cols), stacked.mean(axis=0))

    def test_deterministic_per_seed(self):
        X, y, cols = _step_problem(n=80)
        a = fit_random_forest(X, cols, y, n_trees=10, seed=4)
        b = fit_random_forest(X, cols, y, n_trees=10, seed=4)
        c = fit_random_forest(X, cols, y, n_trees=10, seed=5)
        np.testing.assert_array_equal(a.predict(X, cols), b.predict(X, cols))
        assert not np.array_equal(a.predict(X, cols), c.predict(X, cols))

    def test_min_leaf_smooths(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (100, 1))
        y = X[:, 0] + 0.1 * rng.standard_normal(100)
        deep = fit_random_forest(X, ["x"], y, n_trees=5, min_leaf=1, seed=0)
        shallow = fit_random_forest(X, ["x"], y, n_trees=5, min_leaf=20, seed=0)
        assert len(set(shallow.trees[0].value)) < len(set(deep.trees[0].value))

    def test_invalid_params(self):
        X, y, cols = _step_problem(n=20)
        with pytest.raises(LearnerError):
            fit_random_forest(X, cols, y, n_trees=0)
        with pytest.raises(LearnerError):
            fit_random_forest(X, cols, y, n_trees=1, min_leaf=0)

    def test_serialization(self):
        X, y, cols = _step_problem(n=30)
        payload = fit_random_forest(X, cols, y, n_trees=3).to_dict()
        assert payload["n_trees"] == 3
        assert len(payload["importances"]) == 3
