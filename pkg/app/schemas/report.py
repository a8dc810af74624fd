"""Schemas for the audit report and its tables."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from services.fairness_stats import (
    GroupFairnessRow,
    GroupRateRow,
    Histogram,
    MetricComparison,
    RankingTestRow,
    StatTestResult,
)


REPORT_VERSION = "fairdrop.report/v1"


class ModelEntry(BaseModel):
    """One trained model and its test-cohort predictions."""

    format: str
    algorithm: str
    feature_set: str
    hyperparameters: Dict[str, float]
    cv_auc: Optional[float] = None
    cv_table: List[Dict[str, Any]] = Field(default_factory=list)
    status: str
    n_features: int
    n_train: int
    n_test: int
    train_dropout_rate: float
    threshold: float
    predicted_dropouts: int
    metrics: Dict[str, Optional[float]]


class PerformanceRow(MetricComparison):
    """AWARE vs BLIND on one metric (one row of the overall-performance table)."""

    format: str
    algorithm: str


class GroupRateEntry(GroupRateRow):
    format: str


class FairnessEntry(GroupFairnessRow):
    format: str
    algorithm: str
    feature_set: str


class RankingEntry(RankingTestRow):
    format: str
    algorithm: str


class ProbabilityHistogramEntry(BaseModel):
    format: str
    algorithm: str
    feature_set: str
    histogram: Histogram


class RankingHistogramEntry(BaseModel):
    format: str
    algorithm: str
    attribute: str
    histogram: Histogram


class AuxiliaryEntry(BaseModel):
    """Protected-interaction and encoding regressions on the test cohort."""

    format: str
    n: int
    interaction: Optional[StatTestResult] = None
    encoding: Dict[str, StatTestResult] = Field(default_factory=dict)
    errors: List[str] = Field(default_factory=list)


class BaselineEntry(BaseModel):
    format: str
    n_test: int
    dropout_rate: float
    majority_accuracy: float


class SchemaDiff(BaseModel):
    """Columns the AWARE model sees that the BLIND model does not."""

    format: str
    aware_columns: int
    blind_columns: int
    removed: List[str]


class AuditReport(BaseModel):
    version: str = REPORT_VERSION
    config: Dict[str, Any]
    versions: Dict[str, str] = Field(default_factory=dict)
    tuning: str = Field(
        default="separate",
        description="AWARE and BLIND models get independent grid searches over shared folds",
    )
    models: List[ModelEntry] = Field(default_factory=list)
    performance: List[PerformanceRow] = Field(default_factory=list)
    group_rates: List[GroupRateEntry] = Field(default_factory=list)
    fairness: List[FairnessEntry] = Field(default_factory=list)
    ranking_tests: List[RankingEntry] = Field(default_factory=list)
    probability_histograms: List[ProbabilityHistogramEntry] = Field(default_factory=list)
    ranking_histograms: List[RankingHistogramEntry] = Field(default_factory=list)
    auxiliary: List[AuxiliaryEntry] = Field(default_factory=list)
    baselines: List[BaselineEntry] = Field(default_factory=list)
    schema_diffs: List[SchemaDiff] = Field(default_factory=list)

    @property
    def formats(self) -> List[str]:
        seen: List[str] = []
        for entry in self.baselines:
            if entry.format not in seen:
                seen.append(entry.format)
        return seen

    def model(self, format: str, algorithm: str, feature_set: str) -> ModelEntry:
        for entry in self.models:
            if (entry.format, entry.algorithm, entry.feature_set) == (format, algorithm, feature_set):
                return entry
        raise KeyError(f"no model {format}/{algorithm}/{feature_set}")
