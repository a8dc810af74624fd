import numpy as np
import pytest

from app.core.errors import DataError
from services.learners import FeatureBinner, predict_proba, train_gbt
from services.learners.boosting import _build_histograms, _find_best_split


def _best_split_by_enumeration(X, y):
    """Exhaustive depth-1 search with unit weights and leaf penalty 1."""
    p0 = y.mean()
    g = p0 - y
    h = np.full(y.shape[0], p0 * (1.0 - p0))
    G, H = g.sum(), h.sum()
    best = (-np.inf, None, None)
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lower, upper in zip(values[:-1], values[1:]):
            left = X[:, j] <= (lower + upper) / 2.0
            gl, hl = g[left].sum(), h[left].sum()
            gain = 0.5 * (gl**2 / (hl + 1) + (G - gl) ** 2 / (H - hl + 1) - G**2 / (H + 1))
            if gain > best[0]:
                best = (gain, j, left)
    return best


def test_binner_uses_midpoints_for_few_values():
    X = np.array([[1.0], [2.0], [3.0], [np.nan], [1.5]])
    binner = FeatureBinner.fit(X)
    np.testing.assert_allclose(binner.thresholds[0], [1.5, 2.5])
    assert binner.transform(X)[:, 0].tolist() == [0, 1, 2, 64, 0]
    assert binner.n_bins.tolist() == [3]


def test_binner_uses_quantiles_for_many_values(rng):
    column = rng.standard_normal((1000, 1))
    binner = FeatureBinner.fit(column)
    thresholds = binner.thresholds[0]
    assert thresholds.shape[0] <= 63
    assert np.all(np.diff(thresholds) > 0)
    assert thresholds.max() < column.max()
    assert binner.transform(column).max() <= 63


def test_constant_column_has_one_bin():
    binner = FeatureBinner.fit(np.array([[4.0], [4.0], [np.nan]]))
    assert binner.n_bins.tolist() == [1]


def test_max_bins_range_checked():
    with pytest.raises(DataError):
        FeatureBinner.fit(np.zeros((3, 1)), max_bins=300)


def test_histogram_kernel_matches_numpy(rng):
    binned = rng.integers(0, 5, size=(50, 3)).astype(np.uint8)
    g = rng.standard_normal(50)
    h = rng.random(50)
    rows = np.arange(0, 50, 2, dtype=np.int64)
    hist = _build_histograms(binned, rows, g, h, 6)
    for j in range(3):
        expected_g = np.zeros(6)
        np.add.at(expected_g, binned[rows, j], g[rows])
        np.testing.assert_allclose(hist[j, :, 0], expected_g)
        expected_h = np.zeros(6)
        np.add.at(expected_h, binned[rows, j], h[rows])
        np.testing.assert_allclose(hist[j, :, 1], expected_h)


def test_split_kernel_prefers_missing_right_on_ties():
    # missing rows have zero gradient, so either side scores the same
    hist = np.zeros((1, 3, 2))
    hist[0, 0] = [-2.0, 1.0]
    hist[0, 1] = [2.0, 1.0]
    hist[0, 2] = [0.0, 1.0]
    feature, bin_, missing_left, gain = _find_best_split(
        hist, np.array([2], dtype=np.int64), 0.0, 3.0, 1.0, 0.0, 2
    )
    assert (feature, bin_, missing_left) == (0, 0, False)
    assert gain == pytest.approx(5.0 / 3.0)


def test_split_kernel_separates_missing_from_present():
    # a constant column: only the missing indicator carries signal
    hist = np.zeros((1, 3, 2))
    hist[0, 0] = [-3.0, 3.0]
    hist[0, 2] = [3.0, 3.0]
    feature, bin_, missing_left, gain = _find_best_split(
        hist, np.array([1], dtype=np.int64), 0.0, 6.0, 1.0, 0.0, 2
    )
    assert (feature, bin_, missing_left) == (0, 0, False)
    assert gain == pytest.approx(2.25)


def test_constant_column_with_missing_values_splits(rng):
    x = np.full(120, 4.0)
    missing = rng.random(120) < 0.4
    x[missing] = np.nan
    y = missing.astype(float)
    y[:3] = 1.0 - y[:3]
    model = train_gbt(x[:, None], y, hyper={"n_trees": 20, "max_depth": 1, "learning_rate": 0.3})
    root = model.gbt_trees[0]
    assert root.feature[0] == 0
    assert root.threshold[0] == np.inf
    assert not root.missing_left[0]
    p = predict_proba(model, x[:, None])
    assert p[missing].min() > 0.5 > p[~missing].max()


def _partition_gain(y, left):
    p0 = y.mean()
    g = p0 - y
    h = np.full(y.shape[0], p0 * (1.0 - p0))
    G, H, gl, hl = g.sum(), h.sum(), g[left].sum(), h[left].sum()
    return 0.5 * (gl**2 / (hl + 1) + (G - gl) ** 2 / (H - hl + 1) - G**2 / (H + 1))


@pytest.mark.parametrize("seed", range(100))
def test_depth_one_split_matches_enumeration(seed):
    draws = np.random.default_rng(seed)
    n, d = int(draws.integers(20, 201)), int(draws.integers(1, 6))
    X = np.round(draws.standard_normal((n, d)), 3)
    y = (X[:, draws.integers(d)] + draws.standard_normal(n) > 0).astype(float)
    y[:2] = [1.0, 0.0]
    model = train_gbt(
        X,
        y,
        hyper={"n_trees": 1, "max_depth": 1, "learning_rate": 1.0, "min_child_weight": 0.0},
        max_bins=255,
    )
    tree = model.gbt_trees[0]
    best_gain, feature, expected_left = _best_split_by_enumeration(X, y)

    left = X[:, tree.feature[0]] <= tree.threshold[0]
    assert _partition_gain(y, left) == pytest.approx(best_gain, rel=1e-9)
    if tree.feature[0] == feature:
        np.testing.assert_array_equal(left, expected_left)

    p0 = y.mean()
    g = p0 - y
    h = p0 * (1 - p0)
    assert tree.value[tree.left[0]] == pytest.approx(-g[left].sum() / (h * left.sum() + 1.0))


@pytest.mark.parametrize("seed", range(20))
def test_training_loss_never_increases(seed):
    draws = np.random.default_rng(seed)
    X = draws.standard_normal((300, 4))
    y = (X[:, 0] - X[:, 2] + draws.standard_normal(300) > 0).astype(float)
    X[draws.random((300, 4)) < 0.05 * (seed % 3)] = np.nan
    hyper = {"n_trees": 30, "max_depth": 3, "learning_rate": 0.05 if seed % 2 else 0.1}
    model = train_gbt(X, y, hyper=hyper)
    trace = np.asarray(model.training_meta["loss_trace"])
    assert trace.shape[0] == 31
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[-1] < trace[0]


def test_base_score_is_weighted_log_odds():
    X = np.zeros((4, 1))
    y = np.array([1, 0, 0, 0])
    model = train_gbt(X, y, hyper={"n_trees": 0})
    assert model.base_score == pytest.approx(np.log(1.0 / 3.0))
    weighted = train_gbt(X, y, weights=[3.0, 1.0, 1.0, 1.0], hyper={"n_trees": 0})
    assert weighted.base_score == pytest.approx(0.0)


def test_monotone_transform_leaves_predictions_unchanged(rng):
    X = rng.uniform(0.1, 3.0, size=(200, 3))
    y = (X[:, 0] * X[:, 1] + rng.standard_normal(200) > 2.0).astype(float)
    hyper = {"n_trees": 10, "max_depth": 3}
    plain = predict_proba(train_gbt(X, y, hyper=hyper), X)
    transformed = predict_proba(train_gbt(np.exp(X), y, hyper=hyper), np.exp(X))
    np.testing.assert_allclose(plain, transformed)


def test_missing_values_are_routed(rng):
    x = rng.uniform(-1.0, 1.0, 200)
    x[:40] = np.nan
    y = (np.nan_to_num(x, nan=2.0) > 0.5).astype(float)
    model = train_gbt(x[:, None], y, hyper={"n_trees": 20, "max_depth": 2, "learning_rate": 0.3})
    p = predict_proba(model, x[:, None])
    assert p[:40].min() > 0.5
    assert p[40:][x[40:] < 0].max() < 0.5


def test_identical_labels_give_constant_model():
    model = train_gbt(np.ones((5, 2)), np.ones(5))
    assert model.status == "degenerate"
    assert model.gbt_trees == ()
    np.testing.assert_allclose(predict_proba(model, np.zeros((2, 2))), 1.0 - 1e-12)


def test_training_is_deterministic(rng):
    X = rng.standard_normal((150, 5))
    X[rng.random((150, 5)) < 0.1] = np.nan
    y = (rng.random(150) < 0.4).astype(float)
    first = train_gbt(X, y, hyper={"n_trees": 5})
    second = train_gbt(X, y, hyper={"n_trees": 5})
    for a, b in zip(first.gbt_trees, second.gbt_trees):
        assert a.to_dict() == b.to_dict()


def test_depth_limit_respected(rng):
    X = rng.standard_normal((200, 3))
    y = (rng.random(200) < 0.5).astype(float)
    model = train_gbt(X, y, hyper={"n_trees": 5, "max_depth": 2, "min_child_weight": 0.0})
    assert max(tree.depth for tree in model.gbt_trees) <= 2


def test_unknown_hyperparameter_rejected():
    with pytest.raises(DataError):
        train_gbt(np.zeros((2, 1)), np.array([0, 1]), hyper={"subsample": 0.5})
