"""
Feature engineering: student and course tables to AWARE/BLIND design matrices.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DataError, OrphanCourseRecord
from services.feature_schema import (
    COURSE_LEVELS,
    COURSE_TYPES,
    GRADE_CATEGORIES,
    INCOMING_FEATURES,
    MISSING_GRADE,
    PROTECTED_ATTRIBUTES,
    WITHDRAWN,
    FeatureSchemaConfig,
    course_performance_features,
    grade_label,
    missing_families,
)


logger = logging.getLogger(__name__)

FeatureSet = Literal["AWARE", "BLIND"]

SCHEMA_VERSION = "fairdrop.features/v1"
BINARY_INCOMING = ("transfer",)
BINARY_PROGRAM = ("part_time", "stem_major")


@dataclass(frozen=True, slots=True)
class CategoryVocabulary:
    """Top-K major and minor codes, fitted on training cohorts only."""

    major: Tuple[str, ...]
    minor: Tuple[str, ...]

    @classmethod
    def fit(cls, students: pd.DataFrame, top_k: int) -> "CategoryVocabulary":
        return cls(
            major=_top_categories(students["major"], top_k),
            minor=_top_categories(students["minor"], top_k),
        )


def _top_categories(values: pd.Series, top_k: int) -> Tuple[str, ...]:
    counts = values.dropna().astype(str).value_counts()
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return tuple(code for code, _ in ordered[:top_k])


@dataclass(frozen=True)
class FeatureMatrix:
    """Engineered design matrix for one format and feature set.

    Masked cells always hold the configured sentinel. ``protected_flags`` keeps
    the four protected attributes for every row, including BLIND matrices,
    so fairness statistics can group students the model never saw grouped.
    """

    row_ids: np.ndarray
    column_names: Tuple[str, ...]
    values: np.ndarray
    missing_mask: np.ndarray
    feature_set: FeatureSet
    format: str
    labels: np.ndarray
    cohorts: np.ndarray
    column_kinds: Tuple[str, ...]
    protected_flags: np.ndarray
    sentinel: float = 0.0
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n, d = self.values.shape
        if self.missing_mask.shape != (n, d):
            raise DataError("missing mask shape does not match values")
        if len(self.column_names) != d or len(self.column_kinds) != d:
            raise DataError("column labels do not match matrix width")
        if not (len(self.row_ids) == len(self.labels) == len(self.cohorts) == n):
            raise DataError("row metadata does not match matrix height")

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_columns(self) -> int:
        return int(self.values.shape[1])

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no column named '{name}'") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def group_flags(self, attribute: str) -> np.ndarray:
        return self.protected_flags[:, PROTECTED_ATTRIBUTES.index(attribute)]

    def drop_columns(self, names: Iterable[str], feature_set: Optional[FeatureSet] = None) -> "FeatureMatrix":
        dropped = set(names)
        keep = [i for i, name in enumerate(self.column_names) if name not in dropped]
        return replace(
            self,
            column_names=tuple(self.column_names[i] for i in keep),
            column_kinds=tuple(self.column_kinds[i] for i in keep),
            values=self.values[:, keep].copy(),
            missing_mask=self.missing_mask[:, keep].copy(),
            feature_set=feature_set or self.feature_set,
        )

    def blind(self) -> "FeatureMatrix":
        """Remove the protected-attribute columns; values are untouched."""
        return self.drop_columns(PROTECTED_ATTRIBUTES, feature_set="BLIND")

    def take(self, rows: np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return replace(
            self,
            row_ids=self.row_ids[rows],
            values=self.values[rows],
            missing_mask=self.missing_mask[rows],
            labels=self.labels[rows],
            cohorts=self.cohorts[rows],
            protected_flags=self.protected_flags[rows],
        )

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return replace(self, values=values)

    def model_input(self, kind: str) -> np.ndarray:
        """LR sees the sentinel plus indicators; GBT sees NaN and routes it."""
        if kind == "GBT":
            return np.where(self.missing_mask, np.nan, self.values)
        return self.values

    def to_frame(self, masked_as_nan: bool = True) -> pd.DataFrame:
        values = np.where(self.missing_mask, np.nan, self.values) if masked_as_nan else self.values
        frame = pd.DataFrame(values, columns=list(self.column_names))
        frame.insert(0, "row_id", self.row_ids)
        frame.insert(1, "cohort", self.cohorts)
        frame.insert(2, "dropout", self.labels)
        for j, attribute in enumerate(PROTECTED_ATTRIBUTES):
            frame[f"group__{attribute}"] = self.protected_flags[:, j]
        return frame

    def schema(self) -> Dict[str, object]:
        return {
            "version": SCHEMA_VERSION,
            "feature_set": self.feature_set,
            "format": self.format,
            "sentinel": self.sentinel,
            "columns": [
                {"name": name, "kind": kind}
                for name, kind in zip(self.column_names, self.column_kinds)
            ],
            "metadata_columns": ["row_id", "cohort", "dropout"]
            + [f"group__{attribute}" for attribute in PROTECTED_ATTRIBUTES],
        }


def save_matrix(matrix: FeatureMatrix, path: Path | str) -> Tuple[Path, Path]:
    """Write the matrix as CSV (masked cells empty) plus a JSON schema sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix.to_frame().to_csv(path, index=False, lineterminator="\n")
    sidecar = path.with_suffix(".schema.json")
    sidecar.write_text(json.dumps(matrix.schema(), indent=2), encoding="utf-8")
    return path, sidecar


def load_matrix(path: Path | str) -> FeatureMatrix:
    path = Path(path)
    schema = json.loads(path.with_suffix(".schema.json").read_text(encoding="utf-8"))
    if schema.get("version") != SCHEMA_VERSION:
        raise DataError(f"unsupported feature schema version {schema.get('version')!r}")
    frame = pd.read_csv(path, dtype={"row_id": str})
    names = tuple(column["name"] for column in schema["columns"])
    kinds = tuple(column["kind"] for column in schema["columns"])
    raw = frame.loc[:, list(names)].to_numpy(dtype=float)
    mask = np.isnan(raw)
    sentinel = float(schema["sentinel"])
    return FeatureMatrix(
        row_ids=frame["row_id"].to_numpy(dtype=object),
        column_names=names,
        values=np.where(mask, sentinel, raw),
        missing_mask=mask,
        feature_set=schema["feature_set"],
        format=schema["format"],
        labels=frame["dropout"].to_numpy(dtype=np.int8),
        cohorts=frame["cohort"].to_numpy(dtype=np.int64),
        column_kinds=kinds,
        protected_flags=frame[
            [f"group__{attribute}" for attribute in PROTECTED_ATTRIBUTES]
        ].to_numpy(dtype=np.int8),
        sentinel=sentinel,
    )


def _course_aggregates(
    courses: pd.DataFrame, student_ids: pd.Index, config: FeatureSchemaConfig
) -> pd.DataFrame:
    """Per-student first-term course-performance features, one row per student id."""
    columns = course_performance_features(config)
    if courses.empty:
        out = pd.DataFrame(0.0, index=student_ids, columns=columns)
        out.loc[:, [c for c in columns if c == "term_gpa" or c.startswith("session_")]] = np.nan
        return out

    c = courses.copy()
    letters = c["letter_grade"]
    withdrawn = (letters == WITHDRAWN).to_numpy()
    points = c["grade_points"].astype(float)
    points = points.where(points.notna(), letters.map(config.grade_points).astype(float))
    points = points.where(~withdrawn)
    graded = points.notna()
    c["_points"] = points
    c["_graded_units"] = np.where(graded, c["units"], 0.0)
    c["_weighted_points"] = np.where(graded, points * c["units"], 0.0)

    by_student = c.groupby("student_id", sort=True)
    out = pd.DataFrame(index=student_ids)
    out["total_courses"] = by_student.size()
    out["total_units"] = by_student["units"].sum()
    out["pct_required"] = by_student["required_for_major"].mean() * 100.0

    type_units = c.pivot_table(
        index="student_id", columns="course_type", values="units", aggfunc="sum", fill_value=0.0
    ).reindex(columns=list(COURSE_TYPES), fill_value=0.0)
    for course_type in COURSE_TYPES:
        out[f"units_{course_type}"] = type_units[course_type]

    level_units = c.pivot_table(
        index="student_id", columns="course_level", values="units", aggfunc="sum", fill_value=0.0
    ).reindex(columns=list(COURSE_LEVELS), fill_value=0.0)
    for level in COURSE_LEVELS:
        out[f"units_level_{level}"] = level_units[level]

    graded_units = by_student["_graded_units"].sum()
    weighted = by_student["_weighted_points"].sum()
    out["term_gpa"] = (weighted / graded_units.where(graded_units > 0)).reindex(student_ids)

    graded_rows = c.loc[graded, ["student_id", "session", "_points"]]
    by_session = graded_rows.groupby(["student_id", "session"], sort=True)["_points"]
    session_mean = by_session.mean().unstack("session")
    session_var = by_session.var(ddof=0).unstack("session")
    for session in config.sessions:
        out[f"session_{session}_grade_mean"] = (
            session_mean[session] if session in session_mean.columns else np.nan
        )
        out[f"session_{session}_grade_var"] = (
            session_var[session] if session in session_var.columns else np.nan
        )

    categories = letters.where(letters.notna(), MISSING_GRADE)
    distribution = (
        pd.crosstab(c["student_id"], categories, normalize="index")
        .reindex(columns=list(GRADE_CATEGORIES), fill_value=0.0)
        * 100.0
    )
    for grade in GRADE_CATEGORIES:
        out[f"pct_grade_{grade_label(grade)}"] = distribution[grade]

    # students without course rows
    no_courses = out["total_courses"].isna()
    fill_zero = [col for col in columns if col != "term_gpa" and not col.startswith("session_")]
    out.loc[no_courses, fill_zero] = 0.0
    return out.reindex(columns=columns)


def _one_hot(values: pd.Series, vocabulary: Sequence[str], prefix: str) -> pd.DataFrame:
    text = values.astype(object)
    present = text.notna().to_numpy()
    codes = text.where(text.notna(), "").astype(str).to_numpy()
    frame = {}
    known = np.zeros(len(values), dtype=bool)
    for code in vocabulary:
        hit = codes == code
        known |= hit
        frame[f"{prefix}__{code}"] = hit.astype(float)
    frame[f"{prefix}__other"] = (present & ~known).astype(float)
    return pd.DataFrame(frame, index=values.index)


def engineer_features(
    students: pd.DataFrame,
    courses: pd.DataFrame,
    feature_set: FeatureSet = "AWARE",
    config: Optional[FeatureSchemaConfig] = None,
    vocabulary: Optional[CategoryVocabulary] = None,
) -> FeatureMatrix:
    """Build the design matrix for the given students.

    Args:
        students: Typed student table (see ``services.cohort_data``)
        courses: Typed first-term course table
        feature_set: AWARE keeps the protected attributes, BLIND drops them
        config: Schema options (grade map, sessions, top-K, sentinel)
        vocabulary: Major/minor buckets; fitted on ``students`` when omitted

    Returns:
        FeatureMatrix with rows in student-table order
    """
    config = config or FeatureSchemaConfig()
    if feature_set not in ("AWARE", "BLIND"):
        raise DataError(f"unknown feature set {feature_set!r}")

    known_ids = pd.Index(students["student_id"])
    orphans = ~courses["student_id"].isin(known_ids)
    if orphans.any():
        raise OrphanCourseRecord(sorted(courses.loc[orphans, "student_id"].unique().tolist()))

    vocabulary = vocabulary or CategoryVocabulary.fit(students, config.top_k)
    s = students.reset_index(drop=True)

    parts: List[pd.DataFrame] = []
    kinds: List[str] = []

    protected = s[list(PROTECTED_ATTRIBUTES)].astype(float)
    parts.append(protected)
    kinds += ["binary"] * len(PROTECTED_ATTRIBUTES)

    incoming = s[list(INCOMING_FEATURES)].astype(float)
    parts.append(incoming)
    kinds += ["binary" if name in BINARY_INCOMING else "continuous" for name in INCOMING_FEATURES]

    parts.append(s[list(BINARY_PROGRAM)].astype(float))
    kinds += ["binary"] * len(BINARY_PROGRAM)
    for prefix, codes in (("major", vocabulary.major), ("minor", vocabulary.minor)):
        one_hot = _one_hot(s[prefix], codes, prefix)
        parts.append(one_hot)
        kinds += ["binary"] * one_hot.shape[1]

    course_part = _course_aggregates(courses, known_ids, config).reset_index(drop=True)
    parts.append(course_part)
    kinds += ["continuous"] * course_part.shape[1]

    frame = pd.concat(parts, axis=1)

    indicators = {}
    for family in missing_families(config):
        if family.name in ("major", "minor"):
            triggered = s[family.name].isna().to_numpy()
        else:
            triggered = frame[list(family.triggers)].isna().any(axis=1).to_numpy()
        indicators[family.indicator] = triggered.astype(float)
    indicator_frame = pd.DataFrame(indicators, index=frame.index)
    frame = pd.concat([frame, indicator_frame], axis=1)
    kinds += ["indicator"] * indicator_frame.shape[1]

    raw = frame.to_numpy(dtype=float)
    mask = np.isnan(raw)
    values = np.where(mask, config.sentinel, raw)

    formats = s["format"].dropna().unique().tolist()
    format_name = formats[0] if len(formats) == 1 else "mixed"

    matrix = FeatureMatrix(
        row_ids=s["student_id"].to_numpy(dtype=object),
        column_names=tuple(frame.columns),
        values=values,
        missing_mask=mask,
        feature_set="AWARE",
        format=format_name,
        labels=s["dropout"].to_numpy(dtype=np.int8),
        cohorts=s["cohort"].to_numpy(dtype=np.int64),
        column_kinds=tuple(kinds),
        protected_flags=s[list(PROTECTED_ATTRIBUTES)].to_numpy(dtype=np.int8),
        sentinel=config.sentinel,
        metadata={"vocabulary": {"major": list(vocabulary.major), "minor": list(vocabulary.minor)}},
    )
    logger.debug(
        "Engineered %d x %d %s matrix (%d masked cells)",
        matrix.n_rows,
        matrix.n_columns,
        format_name,
        int(mask.sum()),
    )
    return matrix.blind() if feature_set == "BLIND" else matrix
