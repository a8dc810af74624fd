import numpy as np
import pytest

from app.core.errors import EmptySplit, SchemaMismatch
from services.feature_engineering import FeatureMatrix, engineer_features
from services.preprocessing import apply_scaler, fit_scaler, invert_scaler, split_by_cohort


def _matrix(values, mask=None, kinds=None, cohorts=None):
    values = np.asarray(values, dtype=float)
    n, d = values.shape
    mask = np.zeros((n, d), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return FeatureMatrix(
        row_ids=np.array([f"S{i}" for i in range(n)], dtype=object),
        column_names=tuple(f"x{j}" for j in range(d)),
        values=np.where(mask, 0.0, values),
        missing_mask=mask,
        feature_set="AWARE",
        format="online",
        labels=np.zeros(n, dtype=np.int8),
        cohorts=np.asarray(cohorts if cohorts is not None else [2017] * n, dtype=np.int64),
        column_kinds=tuple(kinds or ["continuous"] * d),
        protected_flags=np.zeros((n, 4), dtype=np.int8),
    )


def test_scaler_uses_median_and_iqr():
    train = _matrix([[1.0], [2.0], [3.0], [4.0], [5.0]])
    scaler = fit_scaler(train)
    assert scaler.median[0] == pytest.approx(3.0)
    assert scaler.iqr[0] == pytest.approx(2.0)
    scaled = apply_scaler(scaler, train)
    np.testing.assert_allclose(scaled.values[:, 0], [-1.0, -0.5, 0.0, 0.5, 1.0])


def test_scaler_leaves_binary_columns_alone():
    train = _matrix([[0.0, 10.0], [1.0, 20.0], [1.0, 30.0]], kinds=["binary", "continuous"])
    scaler = fit_scaler(train)
    scaled = apply_scaler(scaler, train)
    np.testing.assert_array_equal(scaled.values[:, 0], [0.0, 1.0, 1.0])
    assert not scaler.scaled[0]


def test_constant_column_gets_unit_iqr():
    train = _matrix([[7.0], [7.0], [7.0]])
    scaler = fit_scaler(train)
    assert scaler.iqr[0] == 1.0
    np.testing.assert_allclose(apply_scaler(scaler, train).values[:, 0], 0.0)


def test_scaler_ignores_masked_cells():
    mask = [[False], [False], [False], [True]]
    train = _matrix([[1.0], [2.0], [3.0], [1000.0]], mask=mask)
    scaler = fit_scaler(train)
    assert scaler.median[0] == pytest.approx(2.0)
    scaled = apply_scaler(scaler, train)
    assert scaled.values[3, 0] == train.sentinel


def test_all_missing_column_is_left_unscaled():
    mask = [[True], [True]]
    scaler = fit_scaler(_matrix([[0.0], [0.0]], mask=mask))
    assert scaler.median[0] == 0.0
    assert scaler.iqr[0] == 1.0


def test_invert_restores_values():
    train = _matrix([[1.0, 0.0], [4.0, 1.0], [9.0, 1.0], [16.0, 0.0]], kinds=["continuous", "binary"])
    scaler = fit_scaler(train)
    restored = invert_scaler(scaler, apply_scaler(scaler, train))
    np.testing.assert_allclose(restored.values, train.values)


def test_scaler_rejects_other_layout():
    scaler = fit_scaler(_matrix([[1.0], [2.0]]))
    with pytest.raises(SchemaMismatch):
        apply_scaler(scaler, _matrix([[1.0, 2.0]]))


def test_split_by_cohort(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    train, test = split_by_cohort(matrix, 2018)
    assert train.row_ids.tolist() == ["S1", "S2"]
    assert test.row_ids.tolist() == ["S3", "S4"]
    assert test.labels.tolist() == [1, 0]


def test_split_ignores_later_cohorts():
    matrix = _matrix([[1.0], [2.0], [3.0]], cohorts=[2016, 2017, 2018])
    train, test = split_by_cohort(matrix, 2017)
    assert train.n_rows == 1
    assert test.n_rows == 1


def test_empty_split_sides_rejected(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    with pytest.raises(EmptySplit):
        split_by_cohort(matrix, 2019)
    with pytest.raises(EmptySplit):
        split_by_cohort(matrix, 2017)
