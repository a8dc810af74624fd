"""
Student and course tables: column contracts, CSV ingestion and export.

Both tables are pandas DataFrames with canonical column names. Required fields
must parse and satisfy their range invariants; optional fields that cannot be
parsed become missing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.errors import BadValue, MissingColumn
from services.feature_schema import (
    BINARY_STUDENT_FIELDS,
    COURSE_LEVELS,
    COURSE_TYPES,
    DEFAULT_GRADE_POINTS,
    LETTER_GRADES,
    WITHDRAWN,
)


logger = logging.getLogger(__name__)

FORMATS = ("online", "residential")


@dataclass(frozen=True, slots=True)
class Field:
    name: str
    kind: str  # id | int | float | binary | category | enum
    required: bool
    low: Optional[float] = None
    high: Optional[float] = None
    low_inclusive: bool = True
    choices: Optional[Sequence] = None


STUDENT_FIELDS: tuple[Field, ...] = (
    Field("student_id", "id", True),
    Field("cohort", "int", True),
    Field("format", "enum", True, choices=FORMATS),
    Field("gender", "binary", True),
    Field("first_gen", "binary", True),
    Field("urm", "binary", True),
    Field("high_need", "binary", True),
    Field("age", "float", True, low=0.0, low_inclusive=False),
    Field("hs_gpa", "float", False, low=0.0, high=4.0),
    Field("sat_math", "float", False, low=0.0),
    Field("sat_verbal", "float", False, low=0.0),
    Field("transfer", "binary", True),
    Field("transfer_credits", "float", False, low=0.0),
    Field("transfer_gpa", "float", False, low=0.0, high=4.0),
    Field("part_time", "binary", True),
    Field("major", "category", False),
    Field("minor", "category", False),
    Field("stem_major", "binary", True),
    Field("dropout", "binary", True),
)

COURSE_FIELDS: tuple[Field, ...] = (
    Field("student_id", "id", True),
    Field("course_id", "id", True),
    Field("letter_grade", "enum", False, choices=LETTER_GRADES + (WITHDRAWN,)),
    Field("grade_points", "float", False, low=0.0, high=4.33),
    Field("units", "float", True, low=0.0, low_inclusive=False),
    Field("required_for_major", "binary", True),
    Field("course_type", "enum", True, choices=COURSE_TYPES),
    Field("course_level", "int", True, choices=COURSE_LEVELS),
    Field("session", "int", True, low=0.0, low_inclusive=False),
)

STUDENT_COLUMNS = [f.name for f in STUDENT_FIELDS]
COURSE_COLUMNS = [f.name for f in COURSE_FIELDS]


def _blank(raw: pd.Series) -> pd.Series:
    return raw.isna() | (raw.astype(str).str.strip() == "")


def _first_bad(raw: pd.Series, bad: pd.Series, field: Field) -> None:
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise BadValue(position, field.name, raw.iloc[position])


def _parse_field(raw: pd.Series, field: Field) -> pd.Series:
    blank = _blank(raw)
    if field.required:
        _first_bad(raw, blank, field)

    if field.kind == "id":
        return raw.astype(str).str.strip()

    if field.kind in ("category", "enum"):
        text = raw.astype(str).str.strip().where(~blank, None)
        if field.kind == "enum":
            unknown = ~blank & ~text.isin([str(c) for c in field.choices])
            if field.required:
                _first_bad(raw, unknown, field)
            elif unknown.any():
                logger.warning(
                    "%d unparseable values in optional column '%s' set to missing",
                    int(unknown.sum()),
                    field.name,
                )
                text = text.where(~unknown, None)
        return text.astype(object)

    values = pd.to_numeric(raw, errors="coerce")
    unparseable = ~blank & values.isna()
    if field.required:
        _first_bad(raw, unparseable, field)
    elif unparseable.any():
        logger.warning(
            "%d unparseable values in optional column '%s' set to missing",
            int(unparseable.sum()),
            field.name,
        )

    present = values.notna()
    out_of_range = pd.Series(False, index=raw.index)
    if field.kind == "binary":
        out_of_range |= present & ~values.isin([0, 1])
    if field.low is not None:
        below = values <= field.low if not field.low_inclusive else values < field.low
        out_of_range |= present & below
    if field.high is not None:
        out_of_range |= present & (values > field.high)
    if field.kind == "int":
        out_of_range |= present & (values != np.round(values))
        if field.choices is not None:
            out_of_range |= present & ~values.isin(list(field.choices))
    _first_bad(raw, out_of_range, field)

    if field.kind == "binary":
        return values.astype(np.int8)
    if field.kind == "int":
        return values.astype(np.int64)
    return values.astype(float)


def _parse_table(
    frame: pd.DataFrame,
    fields: Sequence[Field],
    column_map: Optional[Mapping[str, str]],
    source: str,
) -> pd.DataFrame:
    column_map = dict(column_map or {})
    renamed = frame.rename(columns={header: name for name, header in column_map.items()})
    renamed = renamed.reset_index(drop=True)
    parsed: Dict[str, pd.Series] = {}
    for field in fields:
        if field.name not in renamed.columns:
            if field.required:
                raise MissingColumn(field.name, source)
            if field.kind == "float":
                parsed[field.name] = pd.Series(np.nan, index=renamed.index, dtype=float)
            else:
                parsed[field.name] = pd.Series(None, index=renamed.index, dtype=object)
            continue
        parsed[field.name] = _parse_field(renamed[field.name], field)
    return pd.DataFrame(parsed, index=renamed.index)


def parse_students(
    frame: pd.DataFrame, column_map: Optional[Mapping[str, str]] = None
) -> pd.DataFrame:
    """Type and validate a raw student table."""
    students = _parse_table(frame, STUDENT_FIELDS, column_map, "students")
    duplicated = students["student_id"].duplicated()
    if duplicated.any():
        position = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise BadValue(position, "student_id", students["student_id"].iloc[position])
    return students


def parse_courses(
    frame: pd.DataFrame,
    column_map: Optional[Mapping[str, str]] = None,
    grade_points: Optional[Mapping[str, float]] = None,
) -> pd.DataFrame:
    """Type and validate a raw course table, checking grade consistency."""
    courses = _parse_table(frame, COURSE_FIELDS, column_map, "courses")
    grade_points = dict(grade_points or DEFAULT_GRADE_POINTS)

    letters = courses["letter_grade"]
    points = courses["grade_points"]
    expected = letters.map(grade_points).astype(float)
    both = letters.notna() & points.notna()
    withdrawn_with_points = both & (letters == WITHDRAWN)
    inconsistent = both & (letters != WITHDRAWN) & ((points - expected).abs() > 1e-6)
    bad = withdrawn_with_points | inconsistent
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise BadValue(position, "grade_points", points.iloc[position])
    return courses


def load_students(
    path: Path | str, column_map: Optional[Mapping[str, str]] = None
) -> pd.DataFrame:
    """Load a student CSV (one row per student) into a typed table."""
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    students = parse_students(raw, column_map)
    logger.info("Loaded %d students from %s", len(students), path)
    return students


def load_courses(
    path: Path | str,
    column_map: Optional[Mapping[str, str]] = None,
    grade_points: Optional[Mapping[str, float]] = None,
) -> pd.DataFrame:
    """Load a first-term course CSV (one row per student-course) into a typed table."""
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    courses = parse_courses(raw, column_map, grade_points)
    logger.info("Loaded %d course records from %s", len(courses), path)
    return courses


def write_table(frame: pd.DataFrame, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
