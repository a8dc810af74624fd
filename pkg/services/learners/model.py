"""Trained model container, prediction and JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from app.core.errors import DataError, SchemaMismatch
from services.feature_engineering import FeatureMatrix


MODEL_FORMAT = "fairdrop.model/v1"
PROBABILITY_CLIP = 1e-12

ModelKind = Literal["LR", "GBT"]
ModelInput = Union[np.ndarray, FeatureMatrix]


@dataclass(frozen=True)
class RegressionTree:
    """Flat-array regression tree.

    Node ``i`` is a leaf when ``feature[i] == -1``. Internal nodes send a row
    left when ``x <= threshold``; missing values follow ``missing_left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            idx = rows[active]
            current = node[idx]
            x = X[idx, self.feature[current]]
            go_left = np.where(np.isnan(x), self.missing_left[current], x <= self.threshold[current])
            node[idx] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> Dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "missing_left": [bool(v) for v in self.missing_left],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, list]) -> "RegressionTree":
        return cls(
            feature=np.asarray(payload["feature"], dtype=np.int64),
            threshold=np.asarray(payload["threshold"], dtype=float),
            missing_left=np.asarray(payload["missing_left"], dtype=bool),
            left=np.asarray(payload["left"], dtype=np.int64),
            right=np.asarray(payload["right"], dtype=np.int64),
            value=np.asarray(payload["value"], dtype=float),
        )


@dataclass(frozen=True)
class TrainedModel:
    kind: ModelKind
    feature_names: Tuple[str, ...]
    hyperparameters: Dict[str, float]
    lr_weights: Optional[np.ndarray] = None
    gbt_trees: Tuple[RegressionTree, ...] = ()
    base_score: float = 0.0
    status: str = "converged"
    training_meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind == "LR":
            if self.lr_weights is None or self.lr_weights.shape[0] != len(self.feature_names) + 1:
                raise DataError("LR coefficients do not match the feature names")
        elif self.kind == "GBT":
            for tree in self.gbt_trees:
                if not np.isfinite(tree.value).all():
                    raise DataError("GBT leaf values must be finite")
                if (tree.feature >= len(self.feature_names)).any():
                    raise DataError("GBT tree splits on a feature outside the model")
        else:
            raise DataError(f"unknown model kind {self.kind!r}")

    @property
    def tag(self) -> str:
        return self.kind

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """Log-odds of dropout for each row."""
        if self.kind == "LR":
            return self.lr_weights[0] + X @ self.lr_weights[1:]
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.gbt_trees:
            margin += tree.predict(X)
        return margin


def _model_rows(model: TrainedModel, X: ModelInput) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        if X.column_names != model.feature_names:
            raise SchemaMismatch(
                f"{model.kind} model expects {len(model.feature_names)} named columns, "
                f"matrix has a different layout ({X.n_columns} columns)"
            )
        return X.model_input(model.kind)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise SchemaMismatch(
            f"{model.kind} model expects {len(model.feature_names)} columns, got shape {X.shape}"
        )
    return X


def predict_proba(model: TrainedModel, X: ModelInput) -> np.ndarray:
    """Predicted dropout probability per row, strictly inside (0, 1)."""
    rows = _model_rows(model, X)
    probabilities = expit(model.decision_function(rows))
    return np.clip(probabilities, np.finfo(float).tiny, np.nextafter(1.0, 0.0))


def log_likelihood(model: TrainedModel, X: ModelInput, y: Sequence[int]) -> float:
    """Bernoulli log-likelihood with probabilities clipped to [1e-12, 1 - 1e-12]."""
    p = np.clip(predict_proba(model, X), PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != p.shape[0]:
        raise SchemaMismatch(f"{y.shape[0]} labels for {p.shape[0]} rows")
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def model_to_dict(model: TrainedModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "hyperparameters": _jsonable(model.hyperparameters),
        "lr_weights": None if model.lr_weights is None else [float(v) for v in model.lr_weights],
        "base_score": float(model.base_score),
        "gbt_trees": [tree.to_dict() for tree in model.gbt_trees],
        "status": model.status,
        "training_meta": _jsonable(model.training_meta),
    }


def model_from_dict(payload: Dict[str, Any]) -> TrainedModel:
    if payload.get("format") != MODEL_FORMAT:
        raise DataError(f"unsupported model format {payload.get('format')!r}")
    weights = payload.get("lr_weights")
    return TrainedModel(
        kind=payload["kind"],
        feature_names=tuple(payload["feature_names"]),
        hyperparameters=dict(payload["hyperparameters"]),
        lr_weights=None if weights is None else np.asarray(weights, dtype=float),
        gbt_trees=tuple(RegressionTree.from_dict(tree) for tree in payload["gbt_trees"]),
        base_score=float(payload["base_score"]),
        status=payload["status"],
        training_meta=dict(payload.get("training_meta", {})),
    )


def save_model(model: TrainedModel, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=2), encoding="utf-8")
    return path


def load_model(path: Path | str) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
