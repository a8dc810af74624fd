"""High-level orchestration of the AWARE/BLIND fairness audit."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.config import AuditConfig
from app.core.errors import ConfigError, FairdropError, PipelineError, StatisticsError, TrainingError
from app.schemas.report import (
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
from services import cohort_data, fairness_stats
from services.calibration import PredictionSet, build_prediction_set, ranking_change
from services.feature_engineering import CategoryVocabulary, FeatureMatrix, engineer_features
from services.feature_schema import PROTECTED_ATTRIBUTES
from services.learners import (
    TrainedModel,
    class_weights,
    fit_model,
    grid_search_cv,
    predict_proba,
    save_model,
)
from services.preprocessing import apply_scaler, fit_scaler, split_by_cohort
from services.synth_cohort import generate, profile_by_name


logger = logging.getLogger(__name__)

FEATURE_SETS = ("AWARE", "BLIND")
VERSIONED_PACKAGES = ("numpy", "pandas", "scipy", "scikit-learn", "numba", "pydantic")


def package_versions() -> Dict[str, str]:
    versions = {}
    for package in ("fairdrop",) + VERSIONED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


@contextmanager
def pipeline_stage(stage: str) -> Iterator[None]:
    """Attach the stage name to any domain failure raised inside the block."""
    try:
        yield
    except (ConfigError, PipelineError):
        raise
    except (FairdropError, ValueError, ArithmeticError) as exc:
        logger.error("Stage %s failed: %s", stage, exc)
        raise PipelineError(stage, exc) from exc


@dataclass(slots=True)
class PreparedFormat:
    """Scaled train/test matrices of one enrollment format."""

    format: str
    train: Dict[str, FeatureMatrix]
    test: Dict[str, FeatureMatrix]

    @property
    def test_labels(self) -> np.ndarray:
        return self.test["AWARE"].labels

    @property
    def train_labels(self) -> np.ndarray:
        return self.train["AWARE"].labels


@dataclass(slots=True)
class ModelRun:
    entry: ModelEntry
    model: TrainedModel
    predictions: PredictionSet


@dataclass
class AuditArtifacts:
    models: Dict[str, TrainedModel] = field(default_factory=dict)
    predictions: Dict[str, PredictionSet] = field(default_factory=dict)

    def write(self, out_dir: Path | str) -> List[Path]:
        out_dir = Path(out_dir)
        paths = []
        for key, model in self.models.items():
            paths.append(save_model(model, out_dir / "models" / f"{key}.json"))
        for key, predictions in self.predictions.items():
            paths.append(predictions.to_csv(out_dir / "predictions" / f"{key}.csv"))
        return paths


class AuditEngine:
    """Runs every format x algorithm pipeline and assembles the report."""

    def __init__(self, config: AuditConfig, workers: Optional[int] = None) -> None:
        self.config = config
        self.workers = workers or config.workers
        self.artifacts = AuditArtifacts()

    def load_tables(self, fmt: str) -> Tuple[pd.DataFrame, pd.DataFrame]:
        data = self.config.data
        if data.source == "csv":
            source = data.csv[fmt]
            students = cohort_data.load_students(source.students, self.config.features.column_map)
            courses = cohort_data.load_courses(
                source.courses, self.config.features.column_map, self.config.features.grade_points
            )
            return students, courses
        profile = profile_by_name(fmt, n=data.n, seed=self.config.stream_seed(f"generator/{fmt}"))
        overrides = data.profile_overrides.get(fmt)
        if overrides:
            try:
                profile = profile.with_overrides(**overrides)
            except ValueError as exc:
                raise ConfigError(f"invalid {fmt} profile overrides: {exc}") from exc
        return generate(profile)

    def prepare(self, fmt: str) -> PreparedFormat:
        with pipeline_stage(f"{fmt}/load"):
            students, courses = self.load_tables(fmt)
        with pipeline_stage(f"{fmt}/features"):
            training_students = students[students["cohort"] < self.config.test_cohort]
            vocabulary = CategoryVocabulary.fit(training_students, self.config.features.top_k)
            aware = engineer_features(students, courses, "AWARE", self.config.features, vocabulary)
            matrices = {"AWARE": aware, "BLIND": aware.blind()}
        train, test = {}, {}
        with pipeline_stage(f"{fmt}/split"):
            for feature_set, matrix in matrices.items():
                raw_train, raw_test = split_by_cohort(matrix, self.config.test_cohort)
                scaler = fit_scaler(raw_train)
                train[feature_set] = apply_scaler(scaler, raw_train)
                test[feature_set] = apply_scaler(scaler, raw_test)
        logger.info(
            "%s: %d training and %d test students, %d AWARE / %d BLIND columns",
            fmt,
            train["AWARE"].n_rows,
            test["AWARE"].n_rows,
            train["AWARE"].n_columns,
            train["BLIND"].n_columns,
        )
        return PreparedFormat(format=fmt, train=train, test=test)

    def train_and_predict(self, prepared: PreparedFormat, algorithm: str, feature_set: str) -> ModelRun:
        fmt = prepared.format
        train, test = prepared.train[feature_set], prepared.test[feature_set]
        with pipeline_stage(f"{fmt}/{algorithm}/{feature_set}/train"):
            X = train.model_input(algorithm)
            y = train.labels
            best, cv_results = grid_search_cv(
                X,
                y,
                algorithm,
                self.config.grids,
                k=self.config.cv_folds,
                seed=self.config.stream_seed("cv"),
                workers=self.workers,
            )
            model = fit_model(
                algorithm,
                X,
                y,
                class_weights(y),
                best,
                feature_names=train.column_names,
                seed=self.config.stream_seed("gbt"),
            )
        with pipeline_stage(f"{fmt}/{algorithm}/{feature_set}/predict"):
            probabilities = predict_proba(model, test)
            predictions = build_prediction_set(
                test.row_ids, probabilities, y, feature_set, algorithm
            )
            cm = fairness_stats.confusion(test.labels, predictions.labels)
        cv_auc = next(r.mean_auc for r in cv_results if r.config == best)
        logger.info(
            "%s %s %s: %s, CV AUC %.4f, threshold %.4f, %d predicted dropouts",
            fmt,
            algorithm,
            feature_set,
            best,
            cv_auc,
            predictions.threshold,
            int(predictions.labels.sum()),
        )
        entry = ModelEntry(
            format=fmt,
            algorithm=algorithm,
            feature_set=feature_set,
            hyperparameters=best,
            cv_auc=cv_auc,
            cv_table=[r.as_row() for r in cv_results],
            status=model.status,
            n_features=train.n_columns,
            n_train=train.n_rows,
            n_test=test.n_rows,
            train_dropout_rate=float(y.mean()),
            threshold=predictions.threshold,
            predicted_dropouts=int(predictions.labels.sum()),
            metrics=fairness_stats.overall_metrics(cm),
        )
        key = f"{fmt}_{algorithm}_{feature_set}"
        self.artifacts.models[key] = model
        self.artifacts.predictions[key] = predictions
        return ModelRun(entry=entry, model=model, predictions=predictions)

    def audit_algorithm(self, prepared: PreparedFormat, algorithm: str, report: AuditReport) -> None:
        fmt = prepared.format
        runs = {fs: self.train_and_predict(prepared, algorithm, fs) for fs in FEATURE_SETS}
        labels = prepared.test_labels
        flags = prepared.test["AWARE"].protected_flags
        with pipeline_stage(f"{fmt}/{algorithm}/statistics"):
            matrices = {
                fs: fairness_stats.confusion(labels, run.predictions.labels) for fs, run in runs.items()
            }
            for metric in fairness_stats.METRICS:
                comparison = fairness_stats.compare_metric(metric, matrices["AWARE"], matrices["BLIND"])
                report.performance.append(
                    PerformanceRow(format=fmt, algorithm=algorithm, **comparison.model_dump())
                )
            for fs, run in runs.items():
                report.models.append(run.entry)
                for j, attribute in enumerate(PROTECTED_ATTRIBUTES):
                    rows = fairness_stats.group_fairness(
                        labels,
                        run.predictions.labels,
                        flags[:, j],
                        attribute=attribute,
                        confidence_level=self.config.confidence_level,
                    )
                    report.fairness.extend(
                        FairnessEntry(format=fmt, algorithm=algorithm, feature_set=fs, **row.model_dump())
                        for row in rows
                    )
                report.probability_histograms.append(
                    ProbabilityHistogramEntry(
                        format=fmt,
                        algorithm=algorithm,
                        feature_set=fs,
                        histogram=fairness_stats.probability_histogram(
                            run.predictions.probabilities, labels, self.config.histogram_bins
                        ),
                    )
                )
            change = ranking_change(runs["BLIND"].predictions, runs["AWARE"].predictions, flags)
            for attribute in PROTECTED_ATTRIBUTES:
                row = fairness_stats.ranking_change_test(change, attribute)
                report.ranking_tests.append(
                    RankingEntry(format=fmt, algorithm=algorithm, **row.model_dump())
                )
                report.ranking_histograms.append(
                    RankingHistogramEntry(
                        format=fmt,
                        algorithm=algorithm,
                        attribute=attribute,
                        histogram=fairness_stats.ranking_change_histogram(
                            change, attribute, self.config.ranking_bins
                        ),
                    )
                )

    def audit_format(self, prepared: PreparedFormat, report: AuditReport) -> None:
        fmt = prepared.format
        labels = prepared.test_labels
        flags = prepared.test["AWARE"].protected_flags
        with pipeline_stage(f"{fmt}/descriptives"):
            report.baselines.append(
                BaselineEntry(
                    format=fmt,
                    n_test=int(labels.shape[0]),
                    dropout_rate=float(labels.mean()),
                    majority_accuracy=fairness_stats.majority_baseline(labels),
                )
            )
            report.group_rates.extend(
                GroupRateEntry(format=fmt, **row.model_dump())
                for row in fairness_stats.group_dropout_rates(labels, flags)
            )
            aware_columns = prepared.test["AWARE"].column_names
            blind_columns = set(prepared.test["BLIND"].column_names)
            report.schema_diffs.append(
                SchemaDiff(
                    format=fmt,
                    aware_columns=len(aware_columns),
                    blind_columns=len(blind_columns),
                    removed=[c for c in aware_columns if c not in blind_columns],
                )
            )
        for algorithm in self.config.algorithms:
            self.audit_algorithm(prepared, algorithm, report)
        report.auxiliary.append(self.auxiliary_analyses(prepared))

    def auxiliary_analyses(self, prepared: PreparedFormat) -> AuxiliaryEntry:
        """Both regressions run on the test cohort; failures are recorded, not raised."""
        blind = prepared.test["BLIND"]
        labels = prepared.test_labels
        entry = AuxiliaryEntry(format=prepared.format, n=blind.n_rows)
        try:
            entry.interaction = fairness_stats.protected_interaction_test(blind.protected_flags, labels)
        except (StatisticsError, TrainingError) as exc:
            entry.errors.append(f"interaction: {exc}")
        try:
            entry.encoding = fairness_stats.encoding_test(blind.model_input("LR"), blind.protected_flags)
        except (StatisticsError, TrainingError) as exc:
            entry.errors.append(f"encoding: {exc}")
        for error in entry.errors:
            logger.warning("%s auxiliary analysis skipped: %s", prepared.format, error)
        return entry

    def run(self) -> AuditReport:
        report = AuditReport(
            config=self.config.model_dump(mode="json"),
            versions=package_versions(),
        )
        for fmt in self.config.formats:
            logger.info("Auditing %s format", fmt)
            prepared = self.prepare(fmt)
            self.audit_format(prepared, report)
        logger.info(
            "Audit complete: %d models across %d formats", len(report.models), len(self.config.formats)
        )
        return report


def run_audit(config: AuditConfig, workers: Optional[int] = None) -> AuditReport:
    """Run the full audit described by ``config``."""
    return AuditEngine(config, workers=workers).run()
