"""
Evaluation statistics for the AWARE/BLIND comparison.

Positive class is dropout throughout. Undefined ratios are returned as None,
never 0. All p-values are two-sided.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import stats

from app.core.errors import (
    DegenerateCounts,
    DegenerateVariance,
    EmptyGroup,
    InvalidLikelihoods,
    LengthMismatch,
    StatisticsError,
)
from services.calibration import RankingChange
from services.feature_schema import ATTRIBUTES, PROTECTED_ATTRIBUTES
from services.learners.logistic import train_lr
from services.learners.model import log_likelihood


logger = logging.getLogger(__name__)

METRICS: Tuple[str, ...] = ("accuracy", "recall", "tnr")
AUXILIARY_L2 = 1e-6


@dataclass(frozen=True, slots=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def denominator(self, metric: str) -> int:
        return {"accuracy": self.n, "recall": self.positives, "tnr": self.negatives}[metric]

    def successes(self, metric: str) -> int:
        return {"accuracy": self.tp + self.tn, "recall": self.tp, "tnr": self.tn}[metric]

    def rate(self, metric: str) -> Optional[float]:
        denominator = self.denominator(metric)
        return self.successes(metric) / denominator if denominator else None


def _binary(values: Sequence[int], name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.size and not np.isin(array, (0, 1)).all():
        raise StatisticsError(f"{name} must be binary")
    return array.astype(np.int8)


def confusion(labels: Sequence[int], predictions: Sequence[int]) -> ConfusionMatrix:
    y = _binary(labels, "labels")
    yhat = _binary(predictions, "predictions")
    if y.shape != yhat.shape:
        raise LengthMismatch(f"{y.shape[0]} labels vs {yhat.shape[0]} predictions")
    return ConfusionMatrix(
        tp=int(((y == 1) & (yhat == 1)).sum()),
        fp=int(((y == 0) & (yhat == 1)).sum()),
        tn=int(((y == 0) & (yhat == 0)).sum()),
        fn=int(((y == 1) & (yhat == 0)).sum()),
    )


def overall_metrics(cm: ConfusionMatrix) -> Dict[str, Optional[float]]:
    """Accuracy, recall and TNR; None where the denominator is 0."""
    return {metric: cm.rate(metric) for metric in METRICS}


def majority_baseline(labels: Sequence[int]) -> float:
    """Accuracy of predicting the majority class for everyone."""
    y = _binary(labels, "labels")
    if y.size == 0:
        raise StatisticsError("majority baseline of an empty label set")
    share = float(y.mean())
    return max(share, 1.0 - share)


class StatTestResult(BaseModel):
    statistic: float
    p_value: float
    df: Optional[float] = None
    effect_size: Optional[float] = None
    adj_r2: Optional[float] = None


def two_proportion_ztest(p1: float, n1: int, p2: float, n2: int) -> StatTestResult:
    """Pooled two-proportion z-test."""
    if n1 <= 0 or n2 <= 0:
        raise DegenerateCounts(f"sample sizes must be positive (got {n1}, {n2})")
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise DegenerateCounts("proportions must lie in [0, 1]")
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    if pooled <= 0.0 or pooled >= 1.0:
        raise DegenerateCounts(f"pooled proportion {pooled} leaves no variance")
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (p1 - p2) / se
    return StatTestResult(statistic=float(z), p_value=float(min(1.0, 2.0 * stats.norm.sf(abs(z)))))


def difference_ci(
    p1: float, n1: int, p2: float, n2: int, confidence_level: float = 0.95
) -> Tuple[float, float]:
    """Normal-approximation interval for p1 - p2 with unpooled variances."""
    z = stats.norm.ppf(0.5 + confidence_level / 2.0)
    half = z * np.sqrt(p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2)
    diff = p1 - p2
    return float(diff - half), float(diff + half)


class MetricComparison(BaseModel):
    """One metric of the AWARE model against the same metric of the BLIND model."""

    metric: str
    aware: Optional[float]
    blind: Optional[float]
    delta: Optional[float]
    z: Optional[float] = None
    p_value: Optional[float] = None


def compare_metric(metric: str, aware: ConfusionMatrix, blind: ConfusionMatrix) -> MetricComparison:
    a, b = aware.rate(metric), blind.rate(metric)
    delta = a - b if a is not None and b is not None else None
    z = p = None
    if delta is not None:
        try:
            result = two_proportion_ztest(a, aware.denominator(metric), b, blind.denominator(metric))
            z, p = result.statistic, result.p_value
        except DegenerateCounts as exc:
            logger.info("No z-test for %s: %s", metric, exc)
    return MetricComparison(metric=metric, aware=a, blind=b, delta=delta, z=z, p_value=p)


class GroupFairnessRow(BaseModel):
    attribute: str
    metric: str
    group_value: Optional[float]
    complement_value: Optional[float]
    difference: Optional[float]
    ci_lower: Optional[float]
    ci_upper: Optional[float]
    n_group: int
    n_complement: int


def group_fairness(
    labels: Sequence[int],
    predictions: Sequence[int],
    group_flags: Sequence[int],
    attribute: str = "",
    confidence_level: float = 0.95,
) -> List[GroupFairnessRow]:
    """Flagged group minus complement for accuracy, recall and TNR, with CIs.

    A metric whose denominator is 0 in either group is reported with None
    values.
    """
    y = _binary(labels, "labels")
    yhat = _binary(predictions, "predictions")
    flags = _binary(group_flags, "group flags")
    if not (y.shape == yhat.shape == flags.shape):
        raise LengthMismatch("labels, predictions and group flags differ in length")
    in_group = flags == 1
    if not in_group.any() or in_group.all():
        raise EmptyGroup(f"attribute {attribute or '?'} has an empty group")

    group_cm = confusion(y[in_group], yhat[in_group])
    complement_cm = confusion(y[~in_group], yhat[~in_group])
    rows = []
    for metric in METRICS:
        g, c = group_cm.rate(metric), complement_cm.rate(metric)
        n_g, n_c = group_cm.denominator(metric), complement_cm.denominator(metric)
        if g is None or c is None:
            rows.append(
                GroupFairnessRow(
                    attribute=attribute, metric=metric, group_value=g, complement_value=c,
                    difference=None, ci_lower=None, ci_upper=None, n_group=n_g, n_complement=n_c,
                )
            )
            continue
        lower, upper = difference_ci(g, n_g, c, n_c, confidence_level)
        rows.append(
            GroupFairnessRow(
                attribute=attribute,
                metric=metric,
                group_value=g,
                complement_value=c,
                difference=g - c,
                ci_lower=lower,
                ci_upper=upper,
                n_group=n_g,
                n_complement=n_c,
            )
        )
    return rows


def _sample(values: Sequence[float], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape[0] < 2:
        raise DegenerateVariance(f"sample {name} needs at least two values")
    if np.var(array) == 0.0:
        raise DegenerateVariance(f"sample {name} has zero variance")
    return array


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardised mean difference using the pooled standard deviation."""
    x, y = _sample(a, "a"), _sample(b, "b")
    n1, n2 = x.shape[0], y.shape[0]
    pooled = np.sqrt(((n1 - 1) * x.var(ddof=1) + (n2 - 1) * y.var(ddof=1)) / (n1 + n2 - 2))
    return float((x.mean() - y.mean()) / pooled)


def welch_ttest(a: Sequence[float], b: Sequence[float]) -> StatTestResult:
    """Welch's unequal-variance t-test, with Cohen's d as the effect size."""
    x, y = _sample(a, "a"), _sample(b, "b")
    result = stats.ttest_ind(x, y, equal_var=False)
    return StatTestResult(
        statistic=float(result.statistic),
        p_value=float(result.pvalue),
        df=float(result.df),
        effect_size=cohens_d(x, y),
    )


def null_log_likelihood(labels: Sequence[int]) -> float:
    """Log-likelihood of the intercept-only model at the sample rate."""
    y = _binary(labels, "labels").astype(float)
    if y.size == 0:
        raise InvalidLikelihoods("null likelihood of an empty sample")
    rate = y.mean()
    if rate in (0.0, 1.0):
        return 0.0
    return float(np.sum(y * np.log(rate) + (1.0 - y) * np.log(1.0 - rate)))


def mcfadden_adj_r2(model_ll: float, null_ll: float, k: int) -> float:
    """1 - (model_ll - k) / null_ll; k counts the intercept."""
    if not null_ll < 0.0:
        raise InvalidLikelihoods(f"null log-likelihood must be negative (got {null_ll})")
    if model_ll > 0.0 or model_ll < null_ll - 1e-9 * abs(null_ll):
        raise InvalidLikelihoods(
            f"model log-likelihood {model_ll} must lie in [null_ll, 0] (null_ll={null_ll})"
        )
    return float(1.0 - (model_ll - k) / null_ll)


def _likelihood_fit(X: np.ndarray, y: np.ndarray, k: int, l2: float) -> StatTestResult:
    """Fit an LR, then report adjusted McFadden R² and the likelihood-ratio test."""
    model = train_lr(X, y, l2=l2)
    model_ll = log_likelihood(model, X, y)
    null_ll = null_log_likelihood(y)
    # the penalised fit can land a hair below the null likelihood
    model_ll = max(model_ll, null_ll)
    adj_r2 = mcfadden_adj_r2(model_ll, null_ll, k)
    statistic = 2.0 * (model_ll - null_ll)
    df = k - 1
    return StatTestResult(
        statistic=float(statistic),
        p_value=float(stats.chi2.sf(statistic, df)) if df > 0 else 1.0,
        df=float(df),
        adj_r2=adj_r2,
    )


def interaction_design(protected_flags: np.ndarray) -> Tuple[np.ndarray, List[str]]:
    """Main effects and every two-, three- and four-way product of the flags."""
    flags = np.asarray(protected_flags, dtype=float)
    k = flags.shape[1]
    columns, names = [], []
    for order in range(1, k + 1):
        for combo in itertools.combinations(range(k), order):
            columns.append(np.prod(flags[:, combo], axis=1))
            names.append(":".join(PROTECTED_ATTRIBUTES[j] for j in combo))
    return np.column_stack(columns), names


def protected_interaction_test(
    protected_flags: np.ndarray, dropout: Sequence[int], l2: float = AUXILIARY_L2
) -> StatTestResult:
    """How much dropout the full factorial of the protected attributes explains."""
    y = _binary(dropout, "dropout")
    flags = _binary(protected_flags, "protected flags")
    if flags.ndim != 2 or flags.shape[1] != len(PROTECTED_ATTRIBUTES):
        raise StatisticsError("expected one column per protected attribute")
    if flags.shape[0] != y.shape[0]:
        raise LengthMismatch("flags and dropout labels differ in length")
    design, names = interaction_design(flags)
    result = _likelihood_fit(design, y, k=len(names) + 1, l2=l2)
    logger.info("Protected-interaction adjusted McFadden R^2 = %.4f", result.adj_r2)
    return result


def encoding_test(
    blind_features: np.ndarray, protected_flags: np.ndarray, l2: float = AUXILIARY_L2
) -> Dict[str, StatTestResult]:
    """How well the BLIND features predict each protected attribute."""
    X = np.asarray(blind_features, dtype=float)
    flags = _binary(protected_flags, "protected flags")
    if flags.shape[0] != X.shape[0]:
        raise LengthMismatch("features and flags differ in length")
    results = {}
    for j, attribute in enumerate(PROTECTED_ATTRIBUTES):
        results[attribute] = _likelihood_fit(X, flags[:, j], k=X.shape[1] + 1, l2=l2)
        logger.info("Encoding of %s by BLIND features: adj R^2 = %.4f", attribute, results[attribute].adj_r2)
    return results


class Histogram(BaseModel):
    edges: List[float]
    counts: Dict[str, List[int]]


def probability_histogram(
    probabilities: Sequence[float], labels: Sequence[int], bins: int = 20
) -> Histogram:
    """Counts of predicted probabilities over [0, 1], split by actual outcome."""
    if bins < 2:
        raise StatisticsError("need at least two bins")
    p = np.asarray(probabilities, dtype=float)
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise LengthMismatch("probabilities and labels differ in length")
    edges = np.linspace(0.0, 1.0, bins + 1)
    dropout, _ = np.histogram(p[y == 1], bins=edges)
    persist, _ = np.histogram(p[y == 0], bins=edges)
    return Histogram(
        edges=edges.tolist(),
        counts={"dropout": dropout.tolist(), "non_dropout": persist.tolist()},
    )


class GroupRateRow(BaseModel):
    attribute: str
    group: str
    flag: int
    n: int
    dropout_rate: Optional[float]


def group_dropout_rates(labels: Sequence[int], protected_flags: np.ndarray) -> List[GroupRateRow]:
    """Observed dropout rate of each group of each protected attribute."""
    y = _binary(labels, "labels")
    flags = _binary(protected_flags, "protected flags")
    rows = []
    for j, attribute in enumerate(PROTECTED_ATTRIBUTES):
        for flag in (1, 0):
            members = flags[:, j] == flag
            n = int(members.sum())
            rows.append(
                GroupRateRow(
                    attribute=attribute,
                    group=ATTRIBUTES[attribute].label(flag),
                    flag=flag,
                    n=n,
                    dropout_rate=float(y[members].mean()) if n else None,
                )
            )
    return rows


class RankingTestRow(BaseModel):
    attribute: str
    first_group: str
    second_group: str
    first_mean: Optional[float]
    second_mean: Optional[float]
    n_first: int
    n_second: int
    t: Optional[float] = None
    df: Optional[float] = None
    p_value: Optional[float] = None
    cohens_d: Optional[float] = None


def ranking_change_test(change: RankingChange, attribute: str) -> RankingTestRow:
    """Welch test and Cohen's d of rank changes, first group of the pair minus second."""
    spec = ATTRIBUTES[attribute]
    first_flag, second_flag = spec.ranking_pair()
    first = change.group_deltas(attribute, first_flag)
    second = change.group_deltas(attribute, second_flag)
    row = RankingTestRow(
        attribute=attribute,
        first_group=spec.label(first_flag),
        second_group=spec.label(second_flag),
        first_mean=float(first.mean()) if first.size else None,
        second_mean=float(second.mean()) if second.size else None,
        n_first=int(first.size),
        n_second=int(second.size),
    )
    try:
        result = welch_ttest(first, second)
    except DegenerateVariance as exc:
        logger.info("No ranking-change test for %s: %s", attribute, exc)
        return row
    return row.model_copy(
        update={
            "t": result.statistic,
            "df": result.df,
            "p_value": result.p_value,
            "cohens_d": result.effect_size,
        }
    )


def ranking_change_histogram(change: RankingChange, attribute: str, bins: int = 40) -> Histogram:
    """Rank-change counts per group of one attribute over shared bin edges."""
    if bins < 2:
        raise StatisticsError("need at least two bins")
    low, high = (float(change.delta.min()), float(change.delta.max())) if change.delta.size else (0.0, 0.0)
    if low == high:
        low, high = low - 0.5, high + 0.5
    edges = np.linspace(low, high, bins + 1)
    spec = ATTRIBUTES[attribute]
    counts = {}
    for flag in spec.ranking_pair():
        counted, _ = np.histogram(change.group_deltas(attribute, flag), bins=edges)
        counts[spec.label(flag)] = counted.tolist()
    return Histogram(edges=edges.tolist(), counts=counts)
