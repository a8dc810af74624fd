"""
Reference feature schema for first-term dropout prediction.

Maps the four feature categories (protected attributes, incoming attributes,
program information, course performance) onto named columns, declares which
columns are binary and which are scaled, and groups the optional values into
missing-value families that each get one indicator column.

Assumptions recorded here:
    - "credits received from different types of courses" counts units, not
      course tallies.
    - W grades count as enrolled courses and appear in the grade distribution,
      but are excluded from GPA and session grade statistics.
    - Major and minor are one reference feature each; the design matrix
      expands them into top-K one-hot buckets plus "other".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


PROTECTED_ATTRIBUTES: Tuple[str, ...] = ("gender", "first_gen", "urm", "high_need")

INCOMING_FEATURES: Tuple[str, ...] = (
    "age",
    "hs_gpa",
    "sat_math",
    "sat_verbal",
    "transfer",
    "transfer_credits",
    "transfer_gpa",
)

PROGRAM_FEATURES: Tuple[str, ...] = ("part_time", "major", "minor", "stem_major")

COURSE_TYPES: Tuple[str, ...] = ("lecture", "seminar", "lab", "other")
COURSE_LEVELS: Tuple[int, ...] = (100, 200, 300, 400)

LETTER_GRADES: Tuple[str, ...] = (
    "A+", "A", "A-", "B+", "B", "B-", "C+", "C", "C-", "D+", "D", "D-", "F",
)
WITHDRAWN = "W"
MISSING_GRADE = "missing"
GRADE_CATEGORIES: Tuple[str, ...] = LETTER_GRADES + (WITHDRAWN, MISSING_GRADE)

DEFAULT_GRADE_POINTS: Dict[str, float] = {
    "A+": 4.33,
    "A": 4.0,
    "A-": 3.67,
    "B+": 3.33,
    "B": 3.0,
    "B-": 2.67,
    "C+": 2.33,
    "C": 2.0,
    "C-": 1.67,
    "D+": 1.33,
    "D": 1.0,
    "D-": 0.67,
    "F": 0.0,
}

BINARY_STUDENT_FIELDS: Tuple[str, ...] = (
    "gender",
    "first_gen",
    "urm",
    "high_need",
    "transfer",
    "part_time",
    "stem_major",
)


@dataclass(frozen=True, slots=True)
class ProtectedAttribute:
    """Labels for the flagged group (value 1) and its complement (value 0)."""

    name: str
    group_label: str
    complement_label: str
    # ranking-change pairs list the lower-dropout group first
    ranking_first_is_group: bool

    def ranking_pair(self) -> Tuple[int, int]:
        return (1, 0) if self.ranking_first_is_group else (0, 1)

    def label(self, flag: int) -> str:
        return self.group_label if flag == 1 else self.complement_label


ATTRIBUTES: Dict[str, ProtectedAttribute] = {
    "gender": ProtectedAttribute("gender", "Female", "Male", True),
    "first_gen": ProtectedAttribute("first_gen", "First-gen", "Continuing-gen", False),
    "urm": ProtectedAttribute("urm", "URM", "Non-URM", False),
    "high_need": ProtectedAttribute("high_need", "High need", "Low need", False),
}


class FeatureSchemaConfig(BaseModel):
    """Config-overridable parts of the schema."""

    column_map: Dict[str, str] = Field(
        default_factory=dict,
        description="Canonical field name -> CSV header, for renamed inputs",
    )
    grade_points: Dict[str, float] = Field(
        default_factory=lambda: dict(DEFAULT_GRADE_POINTS)
    )
    sessions: List[int] = Field(default_factory=lambda: list(range(1, 9)))
    top_k: int = Field(default=10, ge=1)
    sentinel: float = 0.0

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("grade_points")
    @classmethod
    def _check_grade_points(cls, value: Dict[str, float]) -> Dict[str, float]:
        missing = [grade for grade in LETTER_GRADES if grade not in value]
        if missing:
            raise ValueError(f"grade map lacks letters {missing}")
        for grade, points in value.items():
            if not 0.0 <= points <= 4.33:
                raise ValueError(f"grade {grade} maps outside [0, 4.33]")
        return value

    @field_validator("sessions")
    @classmethod
    def _check_sessions(cls, value: List[int]) -> List[int]:
        if not value or len(set(value)) != len(value):
            raise ValueError("sessions must be a non-empty list of distinct indices")
        return value


def grade_label(grade: str) -> str:
    """Column-safe label for a grade category."""
    return grade.replace("+", "_plus").replace("-", "_minus").lower()


def course_performance_features(config: FeatureSchemaConfig) -> List[str]:
    columns = ["total_courses", "total_units", "pct_required"]
    columns += [f"units_{course_type}" for course_type in COURSE_TYPES]
    columns += [f"units_level_{level}" for level in COURSE_LEVELS]
    columns.append("term_gpa")
    for session in config.sessions:
        columns += [f"session_{session}_grade_mean", f"session_{session}_grade_var"]
    columns += [f"pct_grade_{grade_label(grade)}" for grade in GRADE_CATEGORIES]
    return columns


def reference_features(config: FeatureSchemaConfig | None = None) -> List[str]:
    """The reference feature list before one-hot expansion and indicators."""
    config = config or FeatureSchemaConfig()
    return (
        list(PROTECTED_ATTRIBUTES)
        + list(INCOMING_FEATURES)
        + list(PROGRAM_FEATURES)
        + course_performance_features(config)
    )


@dataclass(frozen=True, slots=True)
class MissingFamily:
    """Columns sharing one missing indicator.

    The indicator is 1 when any trigger column is missing. Member columns may
    be masked without firing it (an empty session slot is not a missing
    grade record).
    """

    name: str
    indicator: str
    triggers: Tuple[str, ...]
    members: Tuple[str, ...]


def missing_families(config: FeatureSchemaConfig) -> List[MissingFamily]:
    session_columns = tuple(
        f"session_{session}_grade_{stat}"
        for session in config.sessions
        for stat in ("mean", "var")
    )
    return [
        MissingFamily(
            "course_grades", "grades_missing", ("term_gpa",), ("term_gpa",) + session_columns
        ),
        MissingFamily(
            "test_scores",
            "sat_missing",
            ("sat_math", "sat_verbal"),
            ("sat_math", "sat_verbal"),
        ),
        MissingFamily("hs_gpa", "hs_gpa_missing", ("hs_gpa",), ("hs_gpa",)),
        MissingFamily(
            "transfer",
            "transfer_record_missing",
            ("transfer_gpa", "transfer_credits"),
            ("transfer_gpa", "transfer_credits"),
        ),
        MissingFamily("major", "major_missing", ("major",), ()),
        MissingFamily("minor", "minor_missing", ("minor",), ()),
    ]
