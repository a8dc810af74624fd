"""Class weighting, hyperparameter grids and stratified cross-validated search."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold

from app.core.errors import DataError, FairdropError, SingleClass, TrainingError
from services.learners.boosting import train_gbt
from services.learners.logistic import train_lr
from services.learners.model import ModelKind, TrainedModel, predict_proba


logger = logging.getLogger(__name__)


class HyperGrid(BaseModel):
    """Candidate hyperparameters per algorithm, searched as a full product."""

    lr_l2: List[float] = Field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0, 10.0])
    gbt_trees: List[int] = Field(default_factory=lambda: [100, 300])
    gbt_depth: List[int] = Field(default_factory=lambda: [2, 3, 4, 6])
    gbt_learning_rate: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.3])
    gbt_min_child_weight: List[float] = Field(default_factory=lambda: [1.0, 10.0])

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("lr_l2", "gbt_trees", "gbt_depth", "gbt_learning_rate", "gbt_min_child_weight")
    @classmethod
    def _non_empty(cls, value: list) -> list:
        if not value:
            raise ValueError("grid lists must be non-empty")
        if any(v < 0 for v in value):
            raise ValueError("grid values must be non-negative")
        return value

    @field_validator("gbt_learning_rate")
    @classmethod
    def _positive_rate(cls, value: List[float]) -> List[float]:
        if any(v <= 0 for v in value):
            raise ValueError("learning rates must be positive")
        return value

    def configs(self, kind: ModelKind) -> List[Dict[str, float]]:
        """Configurations in declared grid order."""
        if kind == "LR":
            return [{"l2": float(l2)} for l2 in self.lr_l2]
        if kind == "GBT":
            return [
                {
                    "n_trees": int(trees),
                    "max_depth": int(depth),
                    "learning_rate": float(rate),
                    "min_child_weight": float(weight),
                }
                for trees, depth, rate, weight in itertools.product(
                    self.gbt_trees, self.gbt_depth, self.gbt_learning_rate, self.gbt_min_child_weight
                )
            ]
        raise DataError(f"unknown model kind {kind!r}")


def class_weights(labels: Sequence[int]) -> np.ndarray:
    """Per-sample weights n / (2 n_c), so both classes carry equal total weight."""
    y = np.asarray(labels)
    n = y.shape[0]
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != n:
        raise DataError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"class weights need both classes ({n_neg} negatives, {n_pos} positives)")
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def fit_model(
    kind: ModelKind,
    X: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray],
    config: Dict[str, float],
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> TrainedModel:
    if kind == "LR":
        return train_lr(X, y, weights, l2=config["l2"], feature_names=feature_names, seed=seed)
    if kind == "GBT":
        return train_gbt(X, y, weights, hyper=config, feature_names=feature_names, seed=seed)
    raise DataError(f"unknown model kind {kind!r}")


def stratified_folds(y: Sequence[int], k: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(train rows, validation rows) per fold, stratified on the label."""
    if k < 2:
        raise DataError("cross-validation needs at least two folds")
    y = np.asarray(y)
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return list(splitter.split(np.zeros((y.shape[0], 1)), y))


@dataclass
class CVResult:
    config: Dict[str, float]
    fold_auc: List[Optional[float]] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def disqualified(self) -> bool:
        return bool(self.errors)

    @property
    def mean_auc(self) -> Optional[float]:
        if self.disqualified or not self.fold_auc:
            return None
        return float(np.mean(self.fold_auc))

    def as_row(self) -> Dict[str, object]:
        return {
            **self.config,
            "mean_auc": self.mean_auc,
            "fold_auc": list(self.fold_auc),
            "errors": list(self.errors),
        }


def _score_fold(
    kind: ModelKind,
    X: np.ndarray,
    y: np.ndarray,
    config: Dict[str, float],
    train_rows: np.ndarray,
    valid_rows: np.ndarray,
    balanced: bool,
    seed: int,
) -> float:
    y_train = y[train_rows]
    weights = class_weights(y_train) if balanced else None
    model = fit_model(kind, X[train_rows], y_train, weights, config, seed=seed)
    return float(roc_auc_score(y[valid_rows], predict_proba(model, X[valid_rows])))


def grid_search_cv(
    X: np.ndarray,
    y: Sequence[int],
    kind: ModelKind,
    grid: HyperGrid,
    k: int = 5,
    seed: int = 0,
    balanced: bool = True,
    workers: Optional[int] = None,
) -> Tuple[Dict[str, float], List[CVResult]]:
    """Pick the configuration with the best mean validation AUC.

    Every (config, fold) pair is trained independently, possibly on worker
    threads; results are reduced in grid order so the outcome does not depend
    on scheduling. Ties go to the earlier configuration. A config with any
    failed fold is disqualified.

    Returns:
        (best config, one CVResult per config in grid order)
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    configs = grid.configs(kind)
    folds = stratified_folds(y, k, seed)
    tasks = [(c, f) for c in range(len(configs)) for f in range(len(folds))]

    def run(task: Tuple[int, int]) -> Tuple[Optional[float], Optional[str]]:
        c, f = task
        train_rows, valid_rows = folds[f]
        try:
            return _score_fold(kind, X, y, configs[c], train_rows, valid_rows, balanced, seed), None
        except (FairdropError, ValueError, ArithmeticError) as exc:
            return None, f"fold {f}: {exc}"

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, tasks))
    else:
        outcomes = [run(task) for task in tasks]

    results = [CVResult(config=dict(config)) for config in configs]
    for (c, _), (auc, error) in zip(tasks, outcomes):
        if error is not None:
            results[c].errors.append(error)
        else:
            results[c].fold_auc.append(auc)

    best_index = -1
    best_auc = -np.inf
    for index, result in enumerate(results):
        if result.disqualified:
            logger.warning("%s config %s disqualified: %s", kind, result.config, result.errors[0])
            continue
        if result.mean_auc > best_auc:
            best_index, best_auc = index, result.mean_auc
    if best_index < 0:
        raise TrainingError(f"every {kind} configuration failed cross-validation")
    logger.info(
        "%s grid search: %d configs x %d folds, best %s (AUC %.4f)",
        kind,
        len(configs),
        len(folds),
        configs[best_index],
        best_auc,
    )
    return dict(configs[best_index]), results
