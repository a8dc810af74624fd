"""
Second-order gradient-boosted trees on the logistic loss.

Features are bucketed once into at most ``max_bins`` ordered bins plus a
dedicated missing bin. Each tree grows depth-wise; split candidates come from
per-node gradient/hessian histograms, with the larger child's histogram
obtained by subtraction. The histogram and split kernels are numba-compiled
and release the GIL, so configurations can train on threads concurrently.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.special import expit, logit

from app.core.errors import DataError
from services.learners.model import RegressionTree, TrainedModel


logger = logging.getLogger(__name__)

DEFAULT_MAX_BINS = 64
LEAF_L2 = 1.0
DEGENERATE_CLIP = 1e-12

GBT_DEFAULTS: Dict[str, float] = {
    "n_trees": 100,
    "max_depth": 3,
    "learning_rate": 0.1,
    "min_child_weight": 1.0,
}


@dataclass(frozen=True)
class FeatureBinner:
    """Per-feature split thresholds; bin ``b`` holds values in (t[b-1], t[b]].

    A column with at most ``max_bins`` distinct values gets one bin per value,
    so histogram splits reach every cut an exhaustive search would. Beyond
    that, cuts are quantiles and some exact splits are unreachable.
    """

    thresholds: Tuple[np.ndarray, ...]
    max_bins: int = DEFAULT_MAX_BINS

    @property
    def missing_bin(self) -> int:
        return self.max_bins

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([t.shape[0] + 1 for t in self.thresholds], dtype=np.int64)

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = DEFAULT_MAX_BINS) -> "FeatureBinner":
        if not 2 <= max_bins <= 255:
            raise DataError("max_bins must lie in [2, 255]")
        return cls(
            thresholds=tuple(_column_thresholds(X[:, j], max_bins) for j in range(X.shape[1])),
            max_bins=max_bins,
        )

    def transform(self, X: np.ndarray) -> np.ndarray:
        binned = np.empty(X.shape, dtype=np.uint8)
        for j, thresholds in enumerate(self.thresholds):
            column = X[:, j]
            bins = np.searchsorted(thresholds, column, side="left")
            binned[:, j] = np.where(np.isnan(column), self.missing_bin, bins)
        return binned


def _column_thresholds(column: np.ndarray, max_bins: int) -> np.ndarray:
    observed = column[~np.isnan(column)]
    distinct = np.unique(observed)
    if distinct.shape[0] <= 1:
        return np.empty(0)
    if distinct.shape[0] <= max_bins:
        lower, upper = distinct[:-1], distinct[1:]
        mid = lower + (upper - lower) / 2.0
        return np.where(mid >= upper, lower, mid)
    quantiles = np.linspace(0.0, 100.0, max_bins + 1)[1:-1]
    cuts = np.unique(np.percentile(observed, quantiles, method="lower"))
    return cuts[cuts < distinct[-1]]


@njit(nogil=True, cache=True)
def _build_histograms(binned, sample_idx, gradients, hessians, n_bins_total):
    """Sum of gradients and hessians per (feature, bin) over the given rows."""
    n_features = binned.shape[1]
    hist = np.zeros((n_features, n_bins_total, 2))
    for k in range(sample_idx.shape[0]):
        i = sample_idx[k]
        g = gradients[i]
        h = hessians[i]
        for j in range(n_features):
            b = binned[i, j]
            hist[j, b, 0] += g
            hist[j, b, 1] += h
    return hist


@njit(nogil=True, cache=True)
def _find_best_split(hist, n_bins, sum_g, sum_h, l2, min_child_weight, missing_bin):
    """Best (feature, bin, missing_left, gain) over all histogram cut points.

    A split at bin ``b`` sends bins 0..b left; ``b = n_bins - 1`` with missing
    right separates present from missing values. Candidates are scanned by
    feature, then bin, then missing-right before missing-left; only a strictly
    larger gain replaces the incumbent. Returns feature -1 when no split has
    positive gain.
    """
    best_gain = 0.0
    best_feature = -1
    best_bin = -1
    best_missing_left = False
    parent = sum_g * sum_g / (sum_h + l2)
    for j in range(hist.shape[0]):
        miss_g = hist[j, missing_bin, 0]
        miss_h = hist[j, missing_bin, 1]
        has_missing = miss_h > 0.0
        gl = 0.0
        hl = 0.0
        for b in range(n_bins[j] - 1):
            gl += hist[j, b, 0]
            hl += hist[j, b, 1]

            gr = sum_g - gl
            hr = sum_h - hl
            if hl >= min_child_weight and hr >= min_child_weight:
                gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent)
                if gain > best_gain:
                    best_gain = gain
                    best_feature = j
                    best_bin = b
                    best_missing_left = False

            if has_missing:
                gl_m = gl + miss_g
                hl_m = hl + miss_h
                gr_m = sum_g - gl_m
                hr_m = sum_h - hl_m
                if hl_m >= min_child_weight and hr_m >= min_child_weight:
                    gain = 0.5 * (gl_m * gl_m / (hl_m + l2) + gr_m * gr_m / (hr_m + l2) - parent)
                    if gain > best_gain:
                        best_gain = gain
                        best_feature = j
                        best_bin = b
                        best_missing_left = True

        if has_missing:
            # every present value left, missing right
            gl = sum_g - miss_g
            hl = sum_h - miss_h
            if hl >= min_child_weight and miss_h >= min_child_weight:
                gain = 0.5 * (gl * gl / (hl + l2) + miss_g * miss_g / (miss_h + l2) - parent)
                if gain > best_gain:
                    best_gain = gain
                    best_feature = j
                    best_bin = n_bins[j] - 1
                    best_missing_left = False
    return best_feature, best_bin, best_missing_left, best_gain


@dataclass
class _Node:
    node_id: int
    rows: np.ndarray
    hist: np.ndarray
    depth: int


class TreeGrower:
    """Grows one depth-wise regression tree on binned data."""

    def __init__(
        self,
        binned: np.ndarray,
        binner: FeatureBinner,
        max_depth: int,
        learning_rate: float,
        min_child_weight: float,
        l2: float = LEAF_L2,
    ) -> None:
        self.binned = binned
        self.binner = binner
        self.n_bins = binner.n_bins
        self.n_bins_total = binner.max_bins + 1
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_child_weight = min_child_weight
        self.l2 = l2

    def _histogram(self, rows: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
        return _build_histograms(self.binned, rows, g, h, self.n_bins_total)

    def grow(self, g: np.ndarray, h: np.ndarray) -> RegressionTree:
        feature: List[int] = []
        threshold: List[float] = []
        missing_left: List[bool] = []
        left: List[int] = []
        right: List[int] = []
        value: List[float] = []

        def new_node() -> int:
            feature.append(-1)
            threshold.append(0.0)
            missing_left.append(False)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        all_rows = np.arange(self.binned.shape[0], dtype=np.int64)
        queue = deque([_Node(new_node(), all_rows, self._histogram(all_rows, g, h), 0)])
        has_features = self.binned.shape[1] > 0
        while queue:
            node = queue.popleft()
            sum_g = float(g[node.rows].sum())
            sum_h = float(h[node.rows].sum())
            split_feature = -1
            if has_features and node.depth < self.max_depth and node.rows.shape[0] >= 2:
                hist_g = float(node.hist[0, :, 0].sum())
                hist_h = float(node.hist[0, :, 1].sum())
                split_feature, split_bin, split_missing_left, _ = _find_best_split(
                    node.hist,
                    self.n_bins,
                    hist_g,
                    hist_h,
                    self.l2,
                    self.min_child_weight,
                    self.binner.missing_bin,
                )
            if split_feature < 0:
                value[node.node_id] = -sum_g / (sum_h + self.l2) * self.learning_rate
                continue

            column = self.binned[node.rows, split_feature]
            is_missing = column == self.binner.missing_bin
            go_left = np.where(is_missing, split_missing_left, column <= split_bin)
            left_rows = node.rows[go_left]
            right_rows = node.rows[~go_left]

            if left_rows.shape[0] <= right_rows.shape[0]:
                left_hist = self._histogram(left_rows, g, h)
                right_hist = node.hist - left_hist
            else:
                right_hist = self._histogram(right_rows, g, h)
                left_hist = node.hist - right_hist

            left_id, right_id = new_node(), new_node()
            feature[node.node_id] = int(split_feature)
            cuts = self.binner.thresholds[split_feature]
            threshold[node.node_id] = float(cuts[split_bin]) if split_bin < cuts.shape[0] else np.inf
            missing_left[node.node_id] = bool(split_missing_left)
            left[node.node_id] = left_id
            right[node.node_id] = right_id
            queue.append(_Node(left_id, left_rows, left_hist, node.depth + 1))
            queue.append(_Node(right_id, right_rows, right_hist, node.depth + 1))

        return RegressionTree(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=float),
            missing_left=np.asarray(missing_left, dtype=bool),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            value=np.asarray(value, dtype=float),
        )


def weighted_log_loss(y: np.ndarray, margin: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * (np.logaddexp(0.0, margin) - y * margin)) / w.sum())


def _hyper(hyper: Optional[Dict[str, float]]) -> Dict[str, float]:
    merged = {**GBT_DEFAULTS, **(hyper or {})}
    unknown = set(merged) - set(GBT_DEFAULTS)
    if unknown:
        raise DataError(f"unknown GBT hyperparameters {sorted(unknown)}")
    if int(merged["n_trees"]) < 0 or int(merged["max_depth"]) < 0:
        raise DataError("n_trees and max_depth must be non-negative")
    if not merged["learning_rate"] > 0:
        raise DataError("learning_rate must be positive")
    return {
        "n_trees": int(merged["n_trees"]),
        "max_depth": int(merged["max_depth"]),
        "learning_rate": float(merged["learning_rate"]),
        "min_child_weight": float(merged["min_child_weight"]),
    }


def train_gbt(
    X: np.ndarray,
    y: Sequence[int],
    weights: Optional[Sequence[float]] = None,
    hyper: Optional[Dict[str, float]] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
    max_bins: int = DEFAULT_MAX_BINS,
) -> TrainedModel:
    """Boost regression trees on the weighted logistic loss.

    Args:
        X: n x d matrix; NaN marks a missing value
        y: binary labels
        weights: per-sample weights, rescaled to unit mean
        hyper: n_trees, max_depth, learning_rate, min_child_weight
        feature_names: column labels stored on the model
        seed: recorded for provenance; training draws no random numbers
        max_bins: ordered bins per feature before the missing bin

    Returns:
        TrainedModel of kind GBT; status ``degenerate`` when all labels agree
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if y.shape != (n,):
        raise DataError(f"{y.shape[0]} labels for {n} rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be binary")
    if np.isinf(X).any():
        raise DataError("boosting input contains infinite values")
    params = _hyper(hyper)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(d))
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
            raise DataError("sample weights must be non-negative, positive in total, one per row")
        w = w * (n / w.sum())

    if n == 0 or y.min() == y.max():
        constant = 1.0 - DEGENERATE_CLIP if n and y[0] == 1.0 else DEGENERATE_CLIP
        logger.warning("All %d labels identical; returning a constant boosting model", n)
        return TrainedModel(
            kind="GBT",
            feature_names=names,
            hyperparameters=params,
            base_score=float(logit(constant)),
            status="degenerate",
            training_meta={"seed": seed, "loss_trace": []},
        )

    base_score = float(logit(np.sum(w * y) / np.sum(w)))
    binner = FeatureBinner.fit(X, max_bins=max_bins)
    grower = TreeGrower(
        binner.transform(X),
        binner,
        max_depth=params["max_depth"],
        learning_rate=params["learning_rate"],
        min_child_weight=params["min_child_weight"],
    )

    margin = np.full(n, base_score)
    trees: List[RegressionTree] = []
    loss_trace = [weighted_log_loss(y, margin, w)]
    for _ in range(params["n_trees"]):
        p = expit(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree = grower.grow(g, h)
        trees.append(tree)
        margin += tree.predict(X)
        loss_trace.append(weighted_log_loss(y, margin, w))

    logger.debug(
        "Boosted %d trees (depth %d, eta %g): loss %.5f -> %.5f",
        len(trees),
        params["max_depth"],
        params["learning_rate"],
        loss_trace[0],
        loss_trace[-1],
    )
    return TrainedModel(
        kind="GBT",
        feature_names=names,
        hyperparameters=params,
        gbt_trees=tuple(trees),
        base_score=base_score,
        status="converged",
        training_meta={"seed": seed, "loss_trace": loss_trace, "max_bins": max_bins},
    )
