import numpy as np
import pandas as pd
import pytest

from app.core.errors import DataError, OrphanCourseRecord
from services.feature_engineering import (
    CategoryVocabulary,
    engineer_features,
    load_matrix,
    save_matrix,
)
from services.feature_schema import (
    PROTECTED_ATTRIBUTES,
    FeatureSchemaConfig,
    reference_features,
)
from tests.conftest import make_courses


def _row(matrix, student_id):
    return list(matrix.row_ids).index(student_id)


def test_reference_schema_has_58_features():
    features = reference_features()
    assert len(features) == 58
    assert len(set(features)) == 58
    assert features[:4] == list(PROTECTED_ATTRIBUTES)


def test_course_aggregates_for_one_student(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    i = _row(matrix, "S1")

    assert matrix.values[i, matrix.column_index("total_courses")] == 3
    assert matrix.values[i, matrix.column_index("total_units")] == 7
    assert matrix.values[i, matrix.column_index("pct_required")] == pytest.approx(200 / 3)
    assert matrix.values[i, matrix.column_index("units_lecture")] == 3
    assert matrix.values[i, matrix.column_index("units_lab")] == 1
    assert matrix.values[i, matrix.column_index("units_seminar")] == 3
    assert matrix.values[i, matrix.column_index("units_level_100")] == 4
    assert matrix.values[i, matrix.column_index("units_level_200")] == 3
    assert matrix.values[i, matrix.column_index("term_gpa")] == pytest.approx(3.75)
    assert matrix.values[i, matrix.column_index("session_1_grade_mean")] == pytest.approx(3.5)
    assert matrix.values[i, matrix.column_index("session_1_grade_var")] == pytest.approx(0.25)
    for grade in ("a", "b", "w"):
        assert matrix.values[i, matrix.column_index(f"pct_grade_{grade}")] == pytest.approx(100 / 3)


def test_withdrawn_only_session_is_masked(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    i = _row(matrix, "S1")
    j = matrix.column_index("session_2_grade_mean")
    assert matrix.missing_mask[i, j]
    assert matrix.values[i, j] == matrix.sentinel


def test_failing_grade_without_points_uses_grade_map(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    i = _row(matrix, "S3")
    assert matrix.values[i, matrix.column_index("term_gpa")] == pytest.approx(0.0)
    assert not matrix.missing_mask[i, matrix.column_index("term_gpa")]


def test_missing_indicators(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    grades = {sid: matrix.values[_row(matrix, sid), matrix.column_index("grades_missing")] for sid in matrix.row_ids}
    assert grades == {"S1": 0.0, "S2": 1.0, "S3": 0.0, "S4": 1.0}

    tests = matrix.column("sat_missing")
    assert tests.tolist() == [0.0, 1.0, 0.0, 0.0]
    assert matrix.column("hs_gpa_missing").tolist() == [0.0, 0.0, 0.0, 1.0]
    assert matrix.column("major_missing").tolist() == [0.0, 0.0, 0.0, 1.0]
    assert matrix.column("minor_missing").tolist() == [1.0, 1.0, 0.0, 1.0]


def test_masked_cells_hold_sentinel(tiny_students, tiny_courses):
    config = FeatureSchemaConfig(sentinel=-1.0)
    matrix = engineer_features(tiny_students, tiny_courses, config=config)
    assert matrix.missing_mask.any()
    assert np.all(matrix.values[matrix.missing_mask] == -1.0)
    assert np.isfinite(matrix.values).all()


def test_student_without_courses_gets_zero_counts(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    i = _row(matrix, "S2")
    assert matrix.values[i, matrix.column_index("total_courses")] == 0
    assert not matrix.missing_mask[i, matrix.column_index("total_units")]
    assert matrix.missing_mask[i, matrix.column_index("term_gpa")]


def test_blind_drops_exactly_the_protected_columns(tiny_students, tiny_courses):
    aware = engineer_features(tiny_students, tiny_courses, "AWARE")
    blind = engineer_features(tiny_students, tiny_courses, "BLIND")

    assert blind.feature_set == "BLIND"
    assert set(aware.column_names) - set(blind.column_names) == set(PROTECTED_ATTRIBUTES)
    assert blind.n_columns == aware.n_columns - 4
    keep = [aware.column_index(name) for name in blind.column_names]
    np.testing.assert_array_equal(blind.values, aware.values[:, keep])
    np.testing.assert_array_equal(blind.protected_flags, aware.protected_flags)


def test_protected_flags_follow_student_table(tiny_students, tiny_courses):
    blind = engineer_features(tiny_students, tiny_courses, "BLIND")
    assert blind.group_flags("gender").tolist() == [1, 0, 0, 1]
    assert blind.group_flags("first_gen").tolist() == [0, 0, 1, 0]


def test_orphan_course_record_rejected(tiny_students):
    courses = make_courses([["S9", "C100-01", "A", 4.0, 3, 1, "lecture", 100, 1]])
    with pytest.raises(OrphanCourseRecord) as info:
        engineer_features(tiny_students, courses)
    assert info.value.student_ids == ["S9"]


def test_unknown_feature_set_rejected(tiny_students, tiny_courses):
    with pytest.raises(DataError):
        engineer_features(tiny_students, tiny_courses, "PARTIAL")


def test_vocabulary_buckets_unseen_codes_as_other(tiny_students, tiny_courses):
    vocabulary = CategoryVocabulary(major=("M01",), minor=())
    matrix = engineer_features(tiny_students, tiny_courses, vocabulary=vocabulary)
    assert matrix.column("major__M01").tolist() == [1.0, 0.0, 1.0, 0.0]
    assert matrix.column("major__other").tolist() == [0.0, 1.0, 0.0, 0.0]
    assert matrix.column("minor__other").tolist() == [0.0, 0.0, 1.0, 0.0]


def test_vocabulary_orders_by_frequency_then_code():
    students = pd.DataFrame({"major": ["M03", "M02", "M03", "M01", "M02", None], "minor": [None] * 6})
    vocabulary = CategoryVocabulary.fit(students, top_k=2)
    assert vocabulary.major == ("M02", "M03")
    assert vocabulary.minor == ()


def test_save_and_load_matrix(tmp_path, tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses, "BLIND")
    path, sidecar = save_matrix(matrix, tmp_path / "blind.csv")
    assert sidecar.exists()

    loaded = load_matrix(path)
    assert loaded.column_names == matrix.column_names
    assert loaded.feature_set == "BLIND"
    np.testing.assert_array_equal(loaded.missing_mask, matrix.missing_mask)
    np.testing.assert_allclose(loaded.values, matrix.values)
    np.testing.assert_array_equal(loaded.protected_flags, matrix.protected_flags)


def test_gbt_input_exposes_missing_as_nan(tiny_students, tiny_courses):
    matrix = engineer_features(tiny_students, tiny_courses)
    gbt = matrix.model_input("GBT")
    assert np.isnan(gbt[matrix.missing_mask]).all()
    assert not np.isnan(matrix.model_input("LR")).any()
