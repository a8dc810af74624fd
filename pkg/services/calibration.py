"""
Prevalence-matching decision thresholds, risk ranks and ranking changes.

Rank 1 is the highest predicted dropout probability. Ties, both at the
threshold and in ranks, are broken by row order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DataError, RowMismatch
from services.feature_schema import PROTECTED_ATTRIBUTES


def matched_positive_count(train_labels: Sequence[int], n_test: int) -> int:
    """round(r * n_test) with halves rounded up, computed in integers."""
    y = np.asarray(train_labels)
    n_train = y.shape[0]
    if n_train == 0:
        raise DataError("cannot match prevalence of an empty training set")
    n_pos = int((y == 1).sum())
    m = (2 * n_pos * n_test + n_train) // (2 * n_train)
    return int(min(max(m, 0), n_test))


def risk_order(probabilities: Sequence[float]) -> np.ndarray:
    """Row indices from riskiest to safest; equal probabilities keep row order."""
    p = np.asarray(probabilities, dtype=float)
    return np.argsort(-p, kind="stable")


def rank_by_risk(probabilities: Sequence[float]) -> np.ndarray:
    """Ranks 1..n, 1 = highest probability."""
    p = np.asarray(probabilities, dtype=float)
    if not np.isfinite(p).all():
        raise DataError("probabilities must be finite")
    ranks = np.empty(p.shape[0], dtype=np.int64)
    ranks[risk_order(p)] = np.arange(1, p.shape[0] + 1)
    return ranks


def calibrate_threshold(
    train_labels: Sequence[int], test_probs: Sequence[float]
) -> Tuple[float, np.ndarray]:
    """Threshold and labels so the test positive count matches training prevalence.

    The top-m rows by probability are labelled dropout, where m rounds the
    training dropout rate times the test size. The threshold is the m-th
    largest probability, or just above the maximum when m is 0.
    """
    p = np.asarray(test_probs, dtype=float)
    if p.shape[0] == 0:
        raise DataError("no test probabilities to threshold")
    m = matched_positive_count(train_labels, p.shape[0])
    order = risk_order(p)
    labels = np.zeros(p.shape[0], dtype=np.int8)
    labels[order[:m]] = 1
    threshold = float(p[order[m - 1]]) if m > 0 else float(np.nextafter(p.max(), np.inf))
    return threshold, labels


@dataclass(frozen=True)
class PredictionSet:
    row_ids: np.ndarray
    probabilities: np.ndarray
    threshold: float
    labels: np.ndarray
    ranks: np.ndarray
    feature_set: str
    algorithm: str

    def __post_init__(self) -> None:
        n = self.row_ids.shape[0]
        if not (self.probabilities.shape[0] == self.labels.shape[0] == self.ranks.shape[0] == n):
            raise DataError("prediction arrays differ in length")

    @property
    def model_tag(self) -> str:
        return f"{self.feature_set}-{self.algorithm}"

    @property
    def n(self) -> int:
        return int(self.row_ids.shape[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "row_id": self.row_ids,
                "probability": self.probabilities,
                "label": self.labels,
                "rank": self.ranks,
                "model_tag": self.model_tag,
            }
        )

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
        return path


def build_prediction_set(
    row_ids: Sequence[str],
    probabilities: Sequence[float],
    train_labels: Sequence[int],
    feature_set: str,
    algorithm: str,
) -> PredictionSet:
    p = np.asarray(probabilities, dtype=float)
    threshold, labels = calibrate_threshold(train_labels, p)
    return PredictionSet(
        row_ids=np.asarray(row_ids, dtype=object),
        probabilities=p,
        threshold=threshold,
        labels=labels,
        ranks=rank_by_risk(p),
        feature_set=feature_set,
        algorithm=algorithm,
    )


@dataclass(frozen=True)
class RankingChange:
    """delta = rank under BLIND minus rank under AWARE; positive = riskier under AWARE."""

    row_ids: np.ndarray
    delta: np.ndarray
    protected_flags: np.ndarray

    def group_flags(self, attribute: str) -> np.ndarray:
        return self.protected_flags[:, PROTECTED_ATTRIBUTES.index(attribute)]

    def group_deltas(self, attribute: str, flag: int) -> np.ndarray:
        return self.delta[self.group_flags(attribute) == flag]


def ranking_change(
    blind: PredictionSet, aware: PredictionSet, protected_flags: np.ndarray | None = None
) -> RankingChange:
    """Per-student rank movement from the BLIND to the AWARE model.

    Rows are matched by id; the result follows ``blind``'s row order.
    """
    for predictions in (blind, aware):
        if pd.Index(predictions.row_ids).has_duplicates:
            raise RowMismatch(f"{predictions.model_tag} predictions repeat a row id")
    if blind.n != aware.n or set(blind.row_ids) != set(aware.row_ids):
        raise RowMismatch("BLIND and AWARE predictions cover different students")
    if np.array_equal(blind.row_ids, aware.row_ids):
        aware_ranks = aware.ranks
    else:
        position = pd.Series(np.arange(aware.n), index=aware.row_ids)
        aware_ranks = aware.ranks[position.loc[blind.row_ids].to_numpy()]
    flags = (
        np.zeros((blind.n, len(PROTECTED_ATTRIBUTES)), dtype=np.int8)
        if protected_flags is None
        else np.asarray(protected_flags)
    )
    if flags.shape[0] != blind.n:
        raise RowMismatch("protected flags do not match the prediction rows")
    return RankingChange(
        row_ids=blind.row_ids,
        delta=blind.ranks - aware_ranks,
        protected_flags=flags,
    )
