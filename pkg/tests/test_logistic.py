import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from app.core.errors import DataError, SingleClass
from services.learners import lr_objective, predict_proba, train_lr


def _noisy_problem(rng, n=400, d=5):
    X = rng.standard_normal((n, d))
    beta = rng.standard_normal(d)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(0.3 + X @ beta)))).astype(float)
    return X, y


def test_gradient_matches_finite_differences(rng):
    eps = 1e-6
    for _ in range(50):
        n, d = 30, 20
        X = rng.standard_normal((n, d))
        y = (rng.random(n) < 0.4).astype(float)
        w = rng.uniform(0.5, 2.0, size=n)
        beta = 0.3 * rng.standard_normal(d + 1)
        _, grad = lr_objective(beta, X, y, w, l2=0.7)
        numeric = np.empty_like(beta)
        for j in range(d + 1):
            step = np.zeros_like(beta)
            step[j] = eps
            numeric[j] = (lr_objective(beta + step, X, y, w, 0.7)[0] - lr_objective(beta - step, X, y, w, 0.7)[0]) / (2 * eps)
        assert np.linalg.norm(numeric - grad) / np.linalg.norm(grad) < 1e-5


def test_intercept_is_not_penalised():
    X = np.array([[1.0], [2.0]])
    y = np.array([0.0, 1.0])
    w = np.ones(2)
    loss_a, grad_a = lr_objective(np.array([5.0, 0.0]), X, y, w, l2=100.0)
    loss_b, _ = lr_objective(np.array([5.0, 0.0]), X, y, w, l2=0.0)
    assert loss_a == pytest.approx(loss_b)
    assert grad_a[1] != pytest.approx(0.0)


def test_objective_is_convex_along_segments(rng):
    X, y = _noisy_problem(rng)
    w = np.ones(X.shape[0])
    for _ in range(20):
        a = rng.standard_normal(X.shape[1] + 1)
        b = rng.standard_normal(X.shape[1] + 1)
        t = rng.random()
        middle = lr_objective(t * a + (1 - t) * b, X, y, w, 1.0)[0]
        chord = t * lr_objective(a, X, y, w, 1.0)[0] + (1 - t) * lr_objective(b, X, y, w, 1.0)[0]
        assert middle <= chord + 1e-9


def test_intercept_only_recovers_log_odds():
    y = np.array([1.0] * 100 + [0.0] * 300)
    model = train_lr(np.empty((400, 0)), y)
    assert model.status == "converged"
    assert model.lr_weights[0] == pytest.approx(np.log(1.0 / 3.0), abs=1e-6)


def test_matches_sklearn_on_the_same_objective(rng):
    X, y = _noisy_problem(rng)
    model = train_lr(X, y, l2=2.0)
    reference = LogisticRegression(C=0.5, tol=1e-10, max_iter=10_000).fit(X, y)
    np.testing.assert_allclose(model.lr_weights[0], reference.intercept_[0], atol=1e-4)
    np.testing.assert_allclose(model.lr_weights[1:], reference.coef_[0], atol=1e-4)


def test_separable_data_stays_finite():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    model = train_lr(X, y, l2=1.0)
    assert model.status == "converged"
    assert np.isfinite(model.lr_weights).all()
    p = predict_proba(model, X)
    assert (p[2:] > 0.5).all() and (p[:2] < 0.5).all()


def test_uniform_weights_change_nothing(rng):
    X, y = _noisy_problem(rng)
    plain = train_lr(X, y, l2=0.5)
    doubled = train_lr(X, y, weights=np.full(X.shape[0], 2.0), l2=0.5)
    np.testing.assert_allclose(plain.lr_weights, doubled.lr_weights, atol=1e-8)


def test_integer_weight_equals_duplicated_rows(rng):
    X, y = _noisy_problem(rng, n=200, d=3)
    weights = np.ones(200)
    weights[:50] = 2.0
    weighted = train_lr(X, y, weights=weights, l2=0.0)
    duplicated = train_lr(np.vstack([X, X[:50]]), np.concatenate([y, y[:50]]), l2=0.0)
    np.testing.assert_allclose(weighted.lr_weights, duplicated.lr_weights, atol=1e-5)


def test_iteration_cap_leaves_model_unconverged(rng, caplog):
    X, y = _noisy_problem(rng)
    with caplog.at_level("WARNING", logger="services.learners.logistic"):
        model = train_lr(X, y, max_iter=1)
    assert model.status == "unconverged"
    assert model.training_meta["iterations"] == 1
    assert "unconverged" in caplog.text


def test_training_meta_records_progress(rng):
    X, y = _noisy_problem(rng)
    model = train_lr(X, y, seed=9)
    meta = model.training_meta
    assert meta["seed"] == 9
    assert meta["final_loss"] < meta["initial_loss"]
    assert meta["gradient_norm"] <= 1e-6


def test_single_class_rejected():
    with pytest.raises(SingleClass):
        train_lr(np.ones((3, 1)), np.zeros(3))


def test_non_finite_input_rejected():
    X = np.array([[1.0], [np.nan], [0.0]])
    with pytest.raises(DataError):
        train_lr(X, np.array([0, 1, 0]))


def test_negative_weights_rejected():
    with pytest.raises(DataError):
        train_lr(np.ones((2, 1)), np.array([0, 1]), weights=[1.0, -1.0])
