"""Pydantic schemas for audit reports."""

from .report import (
    AuditReport,
    AuxiliaryEntry,
    BaselineEntry,
    FairnessEntry,
    GroupRateEntry,
    ModelEntry,
    PerformanceRow,
    ProbabilityHistogramEntry,
    RankingEntry,
    RankingHistogramEntry,
    SchemaDiff,
)

__all__ = [
    "AuditReport",
    "AuxiliaryEntry",
    "BaselineEntry",
    "FairnessEntry",
    "GroupRateEntry",
    "ModelEntry",
    "PerformanceRow",
    "ProbabilityHistogramEntry",
    "RankingEntry",
    "RankingHistogramEntry",
    "SchemaDiff",
]
