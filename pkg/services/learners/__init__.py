"""From-scratch logistic regression and gradient-boosted trees."""

from services.learners.boosting import FeatureBinner, train_gbt
from services.learners.logistic import lr_objective, train_lr
from services.learners.model import (
    RegressionTree,
    TrainedModel,
    load_model,
    log_likelihood,
    predict_proba,
    save_model,
)
from services.learners.selection import (
    CVResult,
    HyperGrid,
    class_weights,
    fit_model,
    grid_search_cv,
    stratified_folds,
)

__all__ = [
    "CVResult",
    "FeatureBinner",
    "HyperGrid",
    "RegressionTree",
    "TrainedModel",
    "class_weights",
    "fit_model",
    "grid_search_cv",
    "load_model",
    "log_likelihood",
    "lr_objective",
    "predict_proba",
    "save_model",
    "stratified_folds",
    "train_gbt",
    "train_lr",
]
