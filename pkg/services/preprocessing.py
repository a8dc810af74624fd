"""Robust scaling and cohort-based train/test splitting."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from sklearn.preprocessing import RobustScaler as _SklearnRobustScaler

from app.core.errors import EmptySplit, SchemaMismatch
from services.feature_engineering import FeatureMatrix


logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class RobustScaler:
    """Per-column median and IQR fitted on training rows.

    Binary and indicator columns carry median 0 and IQR 1 and are flagged
    unscaled; constant columns get IQR 1.
    """

    column_names: Tuple[str, ...]
    median: np.ndarray
    iqr: np.ndarray
    scaled: np.ndarray

    def as_dict(self) -> dict:
        return {
            "columns": list(self.column_names),
            "median": [float(v) for v in self.median],
            "iqr": [float(v) for v in self.iqr],
            "scaled": [bool(v) for v in self.scaled],
        }


def fit_scaler(train: FeatureMatrix) -> RobustScaler:
    """Fit medians and IQRs of continuous columns, ignoring masked cells."""
    scaled = np.array([kind == "continuous" for kind in train.column_kinds], dtype=bool)
    median = np.zeros(train.n_columns)
    iqr = np.ones(train.n_columns)
    if scaled.any() and train.n_rows:
        observed = np.where(train.missing_mask, np.nan, train.values)[:, scaled]
        sklearn_scaler = _SklearnRobustScaler(quantile_range=(25.0, 75.0))
        with warnings.catch_warnings():
            # all-missing columns are handled below
            warnings.simplefilter("ignore", category=RuntimeWarning)
            sklearn_scaler.fit(observed)
        center = np.nan_to_num(sklearn_scaler.center_, nan=0.0)
        scale = np.nan_to_num(sklearn_scaler.scale_, nan=1.0)
        scale[scale == 0.0] = 1.0
        median[scaled] = center
        iqr[scaled] = scale
    return RobustScaler(
        column_names=train.column_names, median=median, iqr=iqr, scaled=scaled
    )


def apply_scaler(scaler: RobustScaler, matrix: FeatureMatrix) -> FeatureMatrix:
    """Transform continuous columns by (x - median) / IQR; masked cells stay at the sentinel."""
    if matrix.column_names != scaler.column_names:
        raise SchemaMismatch("scaler was fitted on a different column layout")
    values = (matrix.values - scaler.median) / scaler.iqr
    values = np.where(scaler.scaled, values, matrix.values)
    values = np.where(matrix.missing_mask, matrix.sentinel, values)
    return matrix.with_values(values)


def invert_scaler(scaler: RobustScaler, matrix: FeatureMatrix) -> FeatureMatrix:
    if matrix.column_names != scaler.column_names:
        raise SchemaMismatch("scaler was fitted on a different column layout")
    values = np.where(scaler.scaled, matrix.values * scaler.iqr + scaler.median, matrix.values)
    values = np.where(matrix.missing_mask, matrix.sentinel, values)
    return matrix.with_values(values)


def split_by_cohort(
    matrix: FeatureMatrix, test_cohort: int
) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Hold out one entry cohort; earlier cohorts form the training set."""
    test_rows = np.flatnonzero(matrix.cohorts == test_cohort)
    train_rows = np.flatnonzero(matrix.cohorts < test_cohort)
    if test_rows.size == 0:
        raise EmptySplit(f"no rows in test cohort {test_cohort}")
    if train_rows.size == 0:
        raise EmptySplit(f"no cohorts before {test_cohort} to train on")
    later = int((matrix.cohorts > test_cohort).sum())
    if later:
        logger.warning("Ignoring %d rows from cohorts after %d", later, test_cohort)
    return matrix.take(train_rows), matrix.take(test_rows)
