import numpy as np
import pandas as pd
import pytest

from app.core.config import AuditConfig
from app.services.audit_engine import AuditEngine
from services.cohort_data import parse_courses, parse_students
from services.synth_cohort import generate, profile_by_name


STUDENT_DEFAULTS = {
    "format": "online",
    "gender": 0,
    "first_gen": 0,
    "urm": 0,
    "high_need": 0,
    "age": 20.0,
    "hs_gpa": 3.0,
    "sat_math": 550,
    "sat_verbal": 560,
    "transfer": 0,
    "transfer_credits": 0,
    "transfer_gpa": None,
    "part_time": 0,
    "major": "M01",
    "minor": None,
    "stem_major": 1,
    "dropout": 0,
}


def make_students(rows):
    """Typed student table from partial rows (student_id and cohort required)."""
    return parse_students(pd.DataFrame([{**STUDENT_DEFAULTS, **row} for row in rows]))


def make_courses(rows):
    columns = [
        "student_id", "course_id", "letter_grade", "grade_points", "units",
        "required_for_major", "course_type", "course_level", "session",
    ]
    return parse_courses(pd.DataFrame(rows, columns=columns))


@pytest.fixture
def tiny_students():
    return make_students(
        [
            {"student_id": "S1", "cohort": 2017, "gender": 1, "high_need": 1, "dropout": 0},
            {"student_id": "S2", "cohort": 2017, "urm": 1, "sat_math": None, "sat_verbal": None,
             "major": "M02", "dropout": 1},
            {"student_id": "S3", "cohort": 2018, "first_gen": 1, "transfer": 1,
             "transfer_credits": 30, "transfer_gpa": 2.8, "minor": "N01", "dropout": 1},
            {"student_id": "S4", "cohort": 2018, "gender": 1, "hs_gpa": None, "major": None,
             "stem_major": 0, "dropout": 0},
        ]
    )


@pytest.fixture
def tiny_courses():
    return make_courses(
        [
            ["S1", "C100-01", "A", 4.0, 3, 1, "lecture", 100, 1],
            ["S1", "C100-02", "B", 3.0, 1, 0, "lab", 100, 1],
            ["S1", "C200-03", "W", None, 3, 1, "seminar", 200, 2],
            ["S3", "C100-04", "F", None, 3, 0, "lecture", 100, 1],
            ["S4", "C300-05", None, None, 3, 1, "other", 300, 3],
        ]
    )


@pytest.fixture(scope="session")
def small_online_cohort():
    """A 2,000-student synthetic online cohort shared across modules."""
    profile = profile_by_name("online", n=2000, seed=11)
    students, courses = generate(profile)
    return profile, students, courses


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_audit_config(**overrides):
    """A quick synthetic audit: one format, tiny grids, three folds."""
    payload = {
        "seed": 7,
        "formats": ["online"],
        "algorithms": ["GBT", "LR"],
        "data": {"source": "synth", "n": 1200},
        "grids": {
            "lr_l2": [1.0],
            "gbt_trees": [5],
            "gbt_depth": [2],
            "gbt_learning_rate": [0.3],
            "gbt_min_child_weight": [1.0],
        },
        "cv_folds": 3,
        **overrides,
    }
    return AuditConfig.model_validate(payload)


@pytest.fixture(scope="session")
def small_audit():
    engine = AuditEngine(small_audit_config(), workers=2)
    return engine, engine.run()
