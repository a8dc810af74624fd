"""Exception hierarchy shared by the domain services and the audit pipeline."""

from __future__ import annotations

from typing import Optional


class FairdropError(Exception):
    """Base class for every error raised by fairdrop."""


class ConfigError(FairdropError):
    """Invalid settings or audit configuration."""


# Data model and feature engineering


class DataError(FairdropError, ValueError):
    """Input tables or matrices violate the data contract."""


class MissingColumn(DataError):
    def __init__(self, column: str, source: str = "input") -> None:
        super().__init__(f"{source} is missing required column '{column}'")
        self.column = column
        self.source = source


class BadValue(DataError):
    def __init__(self, row: int, column: str, value: object = None) -> None:
        super().__init__(f"bad value {value!r} in column '{column}' at row {row}")
        self.row = row
        self.column = column
        self.value = value


class OrphanCourseRecord(DataError):
    def __init__(self, student_ids: list[str]) -> None:
        preview = ", ".join(student_ids[:5])
        super().__init__(
            f"{len(student_ids)} course record student ids are unknown (e.g. {preview})"
        )
        self.student_ids = student_ids


class EmptySplit(DataError):
    """A cohort split left the train or test side without rows."""


class SchemaMismatch(DataError):
    """Matrix columns do not line up with what a model was trained on."""


class RowMismatch(DataError):
    """Two prediction sets do not cover the same students."""


# Synthetic cohorts


class ProfileError(FairdropError, ValueError):
    """Population profile cannot be generated."""


class InfeasibleProfile(ProfileError):
    """Group dropout rates are inconsistent with the overall rate."""


# Learners


class TrainingError(FairdropError):
    """Model fitting failed."""


class SingleClass(TrainingError, ValueError):
    """Only one outcome class is present."""


class NonFinite(TrainingError, ArithmeticError):
    """The optimiser produced a non-finite loss."""


# Statistics


class StatisticsError(FairdropError, ValueError):
    """A statistic is undefined for the given inputs."""


class LengthMismatch(StatisticsError):
    pass


class DegenerateCounts(StatisticsError):
    pass


class EmptyGroup(StatisticsError):
    pass


class DegenerateVariance(StatisticsError):
    pass


class InvalidLikelihoods(StatisticsError):
    pass


class PipelineError(FairdropError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Optional[BaseException] = None) -> None:
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"pipeline stage '{stage}' failed{detail}")
        self.stage = stage
        self.cause = cause
