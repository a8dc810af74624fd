import json

import numpy as np
import pytest

from app.core.errors import DataError, SchemaMismatch
from services.feature_engineering import engineer_features
from services.learners import (
    TrainedModel,
    load_model,
    log_likelihood,
    predict_proba,
    save_model,
    train_gbt,
    train_lr,
)
from services.learners.model import MODEL_FORMAT, model_from_dict, model_to_dict


def _fitted_pair(rng):
    X = rng.standard_normal((120, 3))
    X[rng.random((120, 3)) < 0.1] = np.nan
    y = (np.nan_to_num(X[:, 0]) + rng.standard_normal(120) > 0).astype(int)
    lr = train_lr(np.nan_to_num(X), y, l2=0.5, feature_names=["a", "b", "c"])
    gbt = train_gbt(X, y, hyper={"n_trees": 4, "max_depth": 2}, feature_names=["a", "b", "c"])
    return X, y, lr, gbt


def test_probabilities_lie_strictly_inside_the_unit_interval(rng):
    X, _, lr, gbt = _fitted_pair(rng)
    for model, rows in ((lr, np.nan_to_num(X) * 1e6), (gbt, X)):
        p = predict_proba(model, rows)
        assert (p > 0).all() and (p < 1).all()


def test_duplicated_rows_get_identical_probabilities(rng):
    X, _, lr, gbt = _fitted_pair(rng)
    rows = np.vstack([X[:1], X[:1]])
    for model, data in ((lr, np.nan_to_num(rows)), (gbt, rows)):
        p = predict_proba(model, data)
        assert p[0] == p[1]


def test_zero_weight_lr_predicts_one_half():
    model = TrainedModel(kind="LR", feature_names=("a", "b"), hyperparameters={"l2": 1.0}, lr_weights=np.zeros(3))
    np.testing.assert_allclose(predict_proba(model, np.ones((4, 2))), 0.5)


def test_wrong_width_raises_schema_mismatch(rng):
    _, _, lr, gbt = _fitted_pair(rng)
    for model in (lr, gbt):
        with pytest.raises(SchemaMismatch):
            predict_proba(model, np.zeros((2, 4)))


def test_feature_matrix_columns_must_match(tiny_students, tiny_courses, rng):
    _, _, lr, _ = _fitted_pair(rng)
    matrix = engineer_features(tiny_students, tiny_courses)
    with pytest.raises(SchemaMismatch):
        predict_proba(lr, matrix)


def test_feature_matrix_input_for_gbt_uses_nan(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    gbt = train_gbt(matrix.model_input("GBT"), matrix.labels, hyper={"n_trees": 2, "min_child_weight": 0.0},
                    feature_names=matrix.column_names)
    np.testing.assert_allclose(predict_proba(gbt, matrix), predict_proba(gbt, matrix.model_input("GBT")))


def test_log_likelihood_of_constant_model():
    model = TrainedModel(kind="LR", feature_names=("a",), hyperparameters={"l2": 1.0}, lr_weights=np.zeros(2))
    assert log_likelihood(model, np.zeros((4, 1)), [0, 1, 1, 0]) == pytest.approx(4 * np.log(0.5))


def test_save_and_load_preserve_predictions(tmp_path, rng):
    X, _, lr, gbt = _fitted_pair(rng)
    for model, rows in ((lr, np.nan_to_num(X)), (gbt, X)):
        path = save_model(model, tmp_path / f"{model.kind}.json")
        restored = load_model(path)
        assert restored.feature_names == model.feature_names
        assert restored.hyperparameters == model.hyperparameters
        np.testing.assert_array_equal(predict_proba(restored, rows), predict_proba(model, rows))


def test_serialised_model_is_plain_json(rng):
    _, _, _, gbt = _fitted_pair(rng)
    payload = json.loads(json.dumps(model_to_dict(gbt)))
    assert payload["format"] == MODEL_FORMAT
    assert len(payload["gbt_trees"]) == 4
    assert payload["training_meta"]["loss_trace"][0] > payload["training_meta"]["loss_trace"][-1]


def test_unknown_model_format_rejected(rng):
    _, _, lr, _ = _fitted_pair(rng)
    payload = {**model_to_dict(lr), "format": "other/v9"}
    with pytest.raises(DataError):
        model_from_dict(payload)


def test_lr_weights_must_match_feature_names():
    with pytest.raises(DataError):
        TrainedModel(kind="LR", feature_names=("a",), hyperparameters={}, lr_weights=np.zeros(5))
