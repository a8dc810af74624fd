"""
Synthetic student and course populations calibrated to published marginals.

Generates seeded cohorts whose protected-group shares and group dropout
rates match a PopulationProfile. Dropout follows a logistic model on a latent
academic risk score; course grades, GPAs and test scores are noisy readings of
that score, so the non-protected features carry most of the signal.

How protected attributes act on dropout is split by ``protected_effect``: the
calibrated group log-odds shift is routed partly through the latent risk
(visible in grades) and partly straight into dropout.
"""

from __future__ import annotations

import logging
from functools import cached_property
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from numpy.polynomial.hermite_e import hermegauss
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import least_squares
from scipy.special import expit, logit
from scipy.stats import norm

from app.core.errors import InfeasibleProfile
from services.cohort_data import COURSE_COLUMNS, STUDENT_COLUMNS
from services.feature_schema import (
    COURSE_LEVELS,
    COURSE_TYPES,
    DEFAULT_GRADE_POINTS,
    LETTER_GRADES,
    PROTECTED_ATTRIBUTES,
    WITHDRAWN,
)


logger = logging.getLogger(__name__)

SHARE_KEYS: Tuple[str, ...] = PROTECTED_ATTRIBUTES + ("transfer", "part_time")

MAJORS: Tuple[str, ...] = tuple(f"M{i:02d}" for i in range(1, 21))
STEM_MAJORS = frozenset({"M01", "M03", "M04", "M07", "M10", "M12", "M15"})
MINORS: Tuple[str, ...] = tuple(f"N{i:02d}" for i in range(1, 16))

# lecture, seminar, lab, other
BASE_TYPE_PROBS = np.array([0.55, 0.20, 0.20, 0.05])
TYPE_UNITS = {"lecture": 3.0, "seminar": 3.0, "lab": 1.0}
LEVEL_PROBS_FIRST_YEAR = np.array([0.60, 0.25, 0.10, 0.05])
LEVEL_PROBS_TRANSFER = np.array([0.15, 0.30, 0.35, 0.20])

# gender keeps a full opposing direct effect, the other attributes a weak one
DEFAULT_PROTECTED_EFFECT: Dict[str, float] = {
    "gender": -1.0,
    "first_gen": -0.25,
    "urm": -0.25,
    "high_need": -0.25,
}
# female students are slightly less likely to carry the other three flags
DEFAULT_PAIR_CORRELATIONS: Dict[str, float] = {
    "gender:first_gen": -0.2,
    "gender:urm": -0.2,
    "gender:high_need": -0.2,
}

_GH_NODES, _GH_WEIGHTS = hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2.0 * np.pi)


class GroupRate(BaseModel):
    """Dropout rate of the flagged group and of its complement."""

    group: float = Field(ge=0.0, le=1.0)
    complement: float = Field(ge=0.0, le=1.0)

    model_config = ConfigDict(frozen=True)


class MissingRates(BaseModel):
    test_scores: float = Field(default=0.15, ge=0.0, le=1.0)
    grades: float = Field(default=0.05, ge=0.0, le=1.0)
    hs_gpa: float = Field(default=0.05, ge=0.0, le=1.0)
    transfer_credits: float = Field(default=0.05, ge=0.0, le=1.0)
    major: float = Field(default=0.08, ge=0.0, le=1.0)
    minor: float = Field(default=0.70, ge=0.0, le=1.0)

    model_config = ConfigDict(extra="forbid", frozen=True)


class PopulationProfile(BaseModel):
    """Targets and knobs for one enrollment format.

    ``group_shares`` and ``group_dropout`` are keyed by column name; the
    gender flag marks female students.
    """

    n: int = Field(gt=0)
    format: Literal["online", "residential"]
    group_shares: Dict[str, float]
    mean_age: float = Field(gt=16.0)
    overall_dropout: float = Field(ge=0.0, le=1.0)
    group_dropout: Dict[str, GroupRate]
    feature_effect: float = Field(
        default=1.5, gt=0.0, description="Dropout log-odds per SD of latent academic risk"
    )
    protected_effect: Dict[str, float] = Field(
        default_factory=lambda: dict(DEFAULT_PROTECTED_EFFECT),
        description="Share of each group log-odds shift applied directly to dropout",
    )
    gender_signal: float = Field(
        default=0.08, ge=0.0, le=0.19, description="Gender shift in seminar/lab course mix"
    )
    correlation: float = Field(
        default=0.2, gt=-1.0 / 3.0, lt=1.0, description="Latent correlation of every flag pair"
    )
    pair_correlations: Dict[str, float] = Field(
        default_factory=lambda: dict(DEFAULT_PAIR_CORRELATIONS),
        description="Per-pair overrides keyed 'first:second'",
    )
    missing_rates: MissingRates = Field(default_factory=MissingRates)
    cohort_years: List[int] = Field(default_factory=lambda: list(range(2014, 2019)))
    test_share: float = Field(default=0.287, gt=0.0, lt=1.0)
    session_weights: List[float] = Field(
        default_factory=lambda: [0.34, 0.30, 0.30, 0.02, 0.01, 0.01, 0.01, 0.01]
    )
    age_shape: float = Field(default=2.5, gt=0.0)
    consistency_tol: float = Field(default=0.05, ge=0.0)
    seed: int = 0

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("group_shares")
    @classmethod
    def _check_shares(cls, value: Dict[str, float]) -> Dict[str, float]:
        missing = [key for key in SHARE_KEYS if key not in value]
        if missing:
            raise ValueError(f"group_shares lacks {missing}")
        for key, share in value.items():
            if not 0.0 <= share <= 1.0:
                raise ValueError(f"share {key}={share} outside [0, 1]")
        return value

    @field_validator("group_dropout")
    @classmethod
    def _check_group_dropout(cls, value: Dict[str, GroupRate]) -> Dict[str, GroupRate]:
        missing = [key for key in PROTECTED_ATTRIBUTES if key not in value]
        if missing:
            raise ValueError(f"group_dropout lacks {missing}")
        return value

    @field_validator("protected_effect", mode="before")
    @classmethod
    def _broadcast_effect(cls, value):
        if isinstance(value, (int, float)):
            return {attribute: float(value) for attribute in PROTECTED_ATTRIBUTES}
        return value

    @field_validator("pair_correlations")
    @classmethod
    def _check_pairs(cls, value: Dict[str, float]) -> Dict[str, float]:
        for key, rho in value.items():
            names = key.split(":")
            if len(names) != 2 or names[0] == names[1] or not set(names) <= set(PROTECTED_ATTRIBUTES):
                raise ValueError(f"pair_correlations key {key!r} must name two protected attributes")
            if not -1.0 < rho < 1.0:
                raise ValueError(f"correlation {key}={rho} outside (-1, 1)")
        return value

    @model_validator(mode="after")
    def _check_layout(self) -> "PopulationProfile":
        missing = [key for key in PROTECTED_ATTRIBUTES if key not in self.protected_effect]
        if missing:
            raise ValueError(f"protected_effect lacks {missing}")
        if np.linalg.eigvalsh(self.latent_correlation()).min() <= 0.0:
            raise ValueError("protected-attribute correlations are not positive definite")
        if len(self.cohort_years) < 2:
            raise ValueError("at least two cohort years are needed for a cohort split")
        if not self.session_weights or min(self.session_weights) < 0 or sum(self.session_weights) <= 0:
            raise ValueError("session_weights must be non-negative with a positive sum")
        return self

    def latent_correlation(self) -> np.ndarray:
        """Copula correlation matrix in PROTECTED_ATTRIBUTES order."""
        k = len(PROTECTED_ATTRIBUTES)
        corr = np.full((k, k), self.correlation)
        np.fill_diagonal(corr, 1.0)
        for key, rho in self.pair_correlations.items():
            first, second = (PROTECTED_ATTRIBUTES.index(name) for name in key.split(":"))
            corr[first, second] = corr[second, first] = rho
        return corr

    def with_overrides(self, **overrides) -> "PopulationProfile":
        return PopulationProfile.model_validate({**self.model_dump(), **overrides})

    def implied_dropout(self) -> Dict[str, float]:
        """Overall dropout implied by each attribute's group rates and share."""
        return {
            attribute: self.group_shares[attribute] * rate.group
            + (1.0 - self.group_shares[attribute]) * rate.complement
            for attribute, rate in self.group_dropout.items()
        }

    def implied_overall_dropout(self) -> float:
        implied = self.implied_dropout()
        return float(np.mean([implied[attribute] for attribute in PROTECTED_ATTRIBUTES]))

    def check_feasible(self) -> None:
        """Raise InfeasibleProfile when group rates contradict the overall rate."""
        for attribute, rate in self.implied_dropout().items():
            gap = abs(rate - self.overall_dropout)
            if gap > self.consistency_tol:
                raise InfeasibleProfile(
                    f"{self.format}: {attribute} group rates imply overall dropout "
                    f"{rate:.3f}, {gap:.3f} away from {self.overall_dropout:.3f} "
                    f"(tolerance {self.consistency_tol:.3f})"
                )
        implied = self.implied_overall_dropout()
        if abs(implied - self.overall_dropout) > 0.005:
            logger.warning(
                "%s profile: published overall dropout %.3f disagrees with %.3f implied "
                "by group rates; generating to the group rates",
                self.format,
                self.overall_dropout,
                implied,
            )


def default_profiles(n: int = 25_000, seed: int = 0) -> Tuple[PopulationProfile, PopulationProfile]:
    """Online and residential profiles with the published shares and rates."""
    online = PopulationProfile(
        n=n,
        format="online",
        group_shares={
            "gender": 0.609,
            "first_gen": 0.424,
            "urm": 0.331,
            "high_need": 0.619,
            "transfer": 0.852,
            "part_time": 0.772,
        },
        mean_age=27.1,
        overall_dropout=0.407,
        group_dropout={
            "gender": GroupRate(group=0.407, complement=0.495),
            "urm": GroupRate(group=0.466, complement=0.424),
            "first_gen": GroupRate(group=0.437, complement=0.441),
            "high_need": GroupRate(group=0.458, complement=0.405),
        },
        cohort_years=list(range(2014, 2019)),
        test_share=6939 / 24198,
        age_shape=2.0,
        seed=seed,
    )
    residential = PopulationProfile(
        n=n,
        format="residential",
        group_shares={
            "gender": 0.479,
            "first_gen": 0.336,
            "urm": 0.346,
            "high_need": 0.513,
            "transfer": 0.318,
            "part_time": 0.129,
        },
        mean_age=19.7,
        overall_dropout=0.169,
        group_dropout={
            "gender": GroupRate(group=0.140, complement=0.156),
            "urm": GroupRate(group=0.168, complement=0.137),
            "first_gen": GroupRate(group=0.179, complement=0.135),
            "high_need": GroupRate(group=0.170, complement=0.128),
        },
        cohort_years=list(range(2012, 2019)),
        test_share=14275 / 93457,
        age_shape=3.0,
        seed=seed,
    )
    return online, residential


def profile_by_name(name: str, n: Optional[int] = None, seed: int = 0) -> PopulationProfile:
    online, residential = default_profiles(seed=seed)
    profile = {"online": online, "residential": residential}.get(name)
    if profile is None:
        raise ValueError(f"unknown profile {name!r}; expected online or residential")
    return profile.with_overrides(n=n) if n is not None else profile


def _logistic_normal_mean(eta: np.ndarray, scale: float) -> np.ndarray:
    """E[sigmoid(eta + scale * Z)] for standard normal Z."""
    return expit(eta[:, None] + scale * _GH_NODES[None, :]) @ _GH_WEIGHTS


def calibrate_group_shifts(
    flags: np.ndarray, profile: PopulationProfile
) -> Tuple[float, np.ndarray]:
    """Solve intercept and per-attribute log-odds shifts so group rates hit their targets.

    Args:
        flags: n x 4 protected-attribute matrix in PROTECTED_ATTRIBUTES order
        profile: targets and the latent risk scale

    Returns:
        (intercept, shifts) on the dropout log-odds scale
    """
    cells, counts = np.unique(flags, axis=0, return_counts=True)
    targets: List[Tuple[int, int, float]] = []
    for j, attribute in enumerate(PROTECTED_ATTRIBUTES):
        rate = profile.group_dropout[attribute]
        for value, target in ((1, rate.group), (0, rate.complement)):
            if counts[cells[:, j] == value].sum() > 0:
                targets.append((j, value, target))

    def residuals(params: np.ndarray) -> np.ndarray:
        eta = params[0] + cells @ params[1:]
        cell_rate = _logistic_normal_mean(eta, profile.feature_effect)
        out = np.empty(len(targets))
        for k, (j, value, target) in enumerate(targets):
            in_group = cells[:, j] == value
            out[k] = (cell_rate[in_group] @ counts[in_group]) / counts[in_group].sum() - target
        return out

    start_rate = float(np.clip(profile.implied_overall_dropout(), 1e-3, 1 - 1e-3))
    x0 = np.zeros(1 + flags.shape[1])
    x0[0] = logit(start_rate) / np.sqrt(1.0 + np.pi * profile.feature_effect**2 / 8.0)
    fit = least_squares(residuals, x0, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    logger.debug(
        "Calibrated %s shifts %s (max residual %.2e)",
        profile.format,
        np.round(fit.x, 4).tolist(),
        float(np.abs(fit.fun).max()) if fit.fun.size else 0.0,
    )
    return float(fit.x[0]), fit.x[1:].copy()


class CohortGenerator:
    """Draws one student table and one course table from a profile."""

    STREAMS = ("cohort", "attributes", "risk", "incoming", "program", "courses", "missing")

    def __init__(self, profile: PopulationProfile) -> None:
        self.profile = profile
        children = np.random.SeedSequence(profile.seed).spawn(len(self.STREAMS))
        self._rngs = {
            name: np.random.default_rng(child) for name, child in zip(self.STREAMS, children)
        }

    def rng(self, stream: str) -> np.random.Generator:
        return self._rngs[stream]

    @cached_property
    def _id_prefix(self) -> str:
        return "ON" if self.profile.format == "online" else "RS"

    def generate(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        profile = self.profile
        profile.check_feasible()
        n = profile.n

        cohorts = self._generate_cohorts(n)
        flags = self._generate_protected(n)
        transfer = (self.rng("attributes").random(n) < profile.group_shares["transfer"]).astype(np.int8)
        part_time = (self.rng("attributes").random(n) < profile.group_shares["part_time"]).astype(np.int8)

        intercept, shifts = calibrate_group_shifts(flags, profile)
        direct = np.array([profile.protected_effect[a] for a in PROTECTED_ATTRIBUTES])
        noise = self.rng("risk").standard_normal(n)
        # latent academic risk in SD units; higher means weaker academics
        risk = noise + flags @ ((1.0 - direct) * shifts) / profile.feature_effect
        log_odds = intercept + profile.feature_effect * risk + flags @ (direct * shifts)
        dropout = (self.rng("risk").random(n) < expit(log_odds)).astype(np.int8)

        students = pd.DataFrame(
            {
                "student_id": [f"{self._id_prefix}{i:06d}" for i in range(n)],
                "cohort": cohorts,
                "format": profile.format,
                "gender": flags[:, 0],
                "first_gen": flags[:, 1],
                "urm": flags[:, 2],
                "high_need": flags[:, 3],
            }
        )
        incoming = self._generate_incoming(risk, transfer)
        for column, values in incoming.items():
            students[column] = values
        students["part_time"] = part_time
        majors, minors, stem = self._generate_program(n)
        students["major"] = majors
        students["minor"] = minors
        students["stem_major"] = stem
        students["dropout"] = dropout
        students = students[STUDENT_COLUMNS]

        courses = self._generate_courses(students, risk, flags[:, 0], transfer, part_time)
        logger.info(
            "Generated %s cohort: %d students, %d course records, dropout %.3f",
            profile.format,
            n,
            len(courses),
            float(dropout.mean()),
        )
        return students, courses

    def _generate_cohorts(self, n: int) -> np.ndarray:
        years = np.array(self.profile.cohort_years, dtype=np.int64)
        years.sort()
        weights = np.full(len(years), (1.0 - self.profile.test_share) / (len(years) - 1))
        weights[-1] = self.profile.test_share
        return self.rng("cohort").choice(years, size=n, p=weights)

    def _generate_protected(self, n: int) -> np.ndarray:
        """Correlated binary flags through a latent Gaussian copula."""
        corr = self.profile.latent_correlation()
        latent = self.rng("attributes").standard_normal((n, corr.shape[0])) @ np.linalg.cholesky(corr).T
        cutoffs = norm.ppf([self.profile.group_shares[a] for a in PROTECTED_ATTRIBUTES])
        return (latent < cutoffs).astype(np.int8)

    def _generate_incoming(self, risk: np.ndarray, transfer: np.ndarray) -> Dict[str, np.ndarray]:
        profile = self.profile
        rng = self.rng("incoming")
        missing = self.rng("missing")
        rates = profile.missing_rates
        n = risk.shape[0]

        scale = (profile.mean_age - 16.0) / profile.age_shape
        age = np.round(16.0 + rng.gamma(profile.age_shape, scale, size=n), 1)

        hs_gpa = np.round(np.clip(3.25 - 0.35 * risk + 0.35 * rng.standard_normal(n), 0.0, 4.0), 2)
        hs_gpa[missing.random(n) < rates.hs_gpa] = np.nan

        sat_math = np.clip(np.round((530 - 45 * risk + 80 * rng.standard_normal(n)) / 10) * 10, 200, 800)
        sat_verbal = np.clip(np.round((540 - 40 * risk + 80 * rng.standard_normal(n)) / 10) * 10, 200, 800)
        no_scores = missing.random(n) < rates.test_scores
        sat_math[no_scores] = np.nan
        sat_verbal[no_scores] = np.nan

        is_transfer = transfer == 1
        transfer_credits = np.where(is_transfer, np.round(rng.gamma(3.0, 15.0, size=n)), 0.0)
        transfer_credits[is_transfer & (missing.random(n) < rates.transfer_credits)] = np.nan
        transfer_gpa = np.where(
            is_transfer,
            np.round(np.clip(3.0 - 0.3 * risk + 0.4 * rng.standard_normal(n), 0.0, 4.0), 2),
            np.nan,
        )
        return {
            "age": age,
            "hs_gpa": hs_gpa,
            "sat_math": sat_math,
            "sat_verbal": sat_verbal,
            "transfer": transfer,
            "transfer_credits": transfer_credits,
            "transfer_gpa": transfer_gpa,
        }

    def _generate_program(self, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = self.rng("program")
        missing = self.rng("missing")
        rates = self.profile.missing_rates

        major_weights = 1.0 / np.arange(1, len(MAJORS) + 1) ** 0.8
        majors = rng.choice(np.array(MAJORS, dtype=object), size=n, p=major_weights / major_weights.sum())
        majors[missing.random(n) < rates.major] = None
        minor_weights = 1.0 / np.arange(1, len(MINORS) + 1) ** 0.6
        minors = rng.choice(np.array(MINORS, dtype=object), size=n, p=minor_weights / minor_weights.sum())
        minors[missing.random(n) < rates.minor] = None
        stem = np.array([major in STEM_MAJORS for major in majors], dtype=np.int8)
        return majors, minors, stem

    def _generate_courses(
        self,
        students: pd.DataFrame,
        risk: np.ndarray,
        female: np.ndarray,
        transfer: np.ndarray,
        part_time: np.ndarray,
    ) -> pd.DataFrame:
        profile = self.profile
        rng = self.rng("courses")
        missing = self.rng("missing")
        n = len(students)

        per_student = 2 + rng.binomial(6, np.where(part_time == 1, 0.3, 0.6))
        owner = np.repeat(np.arange(n), per_student)
        total = owner.shape[0]

        # gender tilts the seminar/lab mix only; dropout never sees it
        tilt = profile.gender_signal * np.where(female[owner] == 1, 1.0, -1.0)
        type_probs = np.tile(BASE_TYPE_PROBS, (total, 1))
        type_probs[:, 1] += tilt
        type_probs[:, 2] -= tilt
        type_index = (rng.random(total)[:, None] > np.cumsum(type_probs, axis=1)).sum(axis=1)
        type_index = np.minimum(type_index, len(COURSE_TYPES) - 1)
        course_type = np.array(COURSE_TYPES, dtype=object)[type_index]
        other_units = rng.integers(1, 5, size=total).astype(float)
        units = np.array([TYPE_UNITS.get(t, 0.0) for t in course_type])
        units = np.where(course_type == "other", other_units, units)

        level_draw = rng.random(total)
        first_year_levels = np.searchsorted(np.cumsum(LEVEL_PROBS_FIRST_YEAR), level_draw, side="right")
        transfer_levels = np.searchsorted(np.cumsum(LEVEL_PROBS_TRANSFER), level_draw, side="right")
        level_index = np.minimum(
            np.where(transfer[owner] == 1, transfer_levels, first_year_levels), len(COURSE_LEVELS) - 1
        )
        course_level = np.array(COURSE_LEVELS, dtype=np.int64)[level_index]

        required = (rng.random(total) < 0.65).astype(np.int8)
        session_weights = np.asarray(profile.session_weights, dtype=float)
        session = rng.choice(
            np.arange(1, len(session_weights) + 1), size=total, p=session_weights / session_weights.sum()
        )
        course_number = rng.integers(1, 60, size=total)

        course_risk = risk[owner]
        quality = (
            3.05
            - 0.55 * course_risk
            - 0.05 * (course_level / 100.0 - 1.0)
            + 0.6 * rng.standard_normal(total)
        )
        quality = np.clip(quality, 0.0, 4.33)
        letter_points = np.array([DEFAULT_GRADE_POINTS[g] for g in LETTER_GRADES])
        nearest = np.abs(quality[:, None] - letter_points[None, :]).argmin(axis=1)
        letters = np.array(LETTER_GRADES, dtype=object)[nearest]
        grade_points = letter_points[nearest].astype(float)
        withdrawn = rng.random(total) < expit(-3.2 + 0.9 * course_risk)
        letters[withdrawn] = WITHDRAWN
        grade_points[withdrawn] = np.nan
        no_grade = missing.random(total) < profile.missing_rates.grades
        letters[no_grade] = None
        grade_points[no_grade] = np.nan

        courses = pd.DataFrame(
            {
                "student_id": students["student_id"].to_numpy()[owner],
                "course_id": [
                    f"C{level}-{number:02d}" for level, number in zip(course_level, course_number)
                ],
                "letter_grade": letters,
                "grade_points": grade_points,
                "units": units,
                "required_for_major": required,
                "course_type": course_type,
                "course_level": course_level,
                "session": session,
            }
        )
        return courses[COURSE_COLUMNS]


def generate(profile: PopulationProfile) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Seeded, deterministic student and course tables for a profile."""
    return CohortGenerator(profile).generate()


class MarginalCheck(BaseModel):
    quantity: str
    target: float
    empirical: Optional[float]
    deviation: Optional[float]
    tolerance: float
    passed: bool
    note: Optional[str] = None


class MarginalReport(BaseModel):
    format: str
    n: int
    checks: List[MarginalCheck]

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> List[MarginalCheck]:
        return [check for check in self.checks if not check.passed]

    def to_yaml(self) -> str:
        payload = {**self.model_dump(), "all_passed": self.all_passed}
        return yaml.safe_dump(payload, sort_keys=False)


def _check(quantity: str, target: float, empirical: Optional[float], tolerance: float, scale: float, note: Optional[str] = None) -> MarginalCheck:
    if empirical is None or np.isnan(empirical):
        return MarginalCheck(
            quantity=quantity, target=target, empirical=None, deviation=None,
            tolerance=tolerance, passed=False, note=note or "undefined on empty input",
        )
    deviation = (empirical - target) * scale
    return MarginalCheck(
        quantity=quantity,
        target=target,
        empirical=float(empirical),
        deviation=float(deviation),
        tolerance=tolerance,
        passed=bool(abs(deviation) < tolerance),
        note=note,
    )


def _mean_or_none(values: pd.Series) -> Optional[float]:
    return float(values.mean()) if len(values) else None


def validate_marginals(
    students: pd.DataFrame,
    courses: pd.DataFrame,
    profile: PopulationProfile,
    tol: float = 1.0,
    dropout_tol: float = 1.5,
    age_tol: float = 0.5,
) -> MarginalReport:
    """Compare empirical shares and dropout rates with the profile targets.

    Tolerances for shares and rates are in percentage points, the age
    tolerance in years. A check passes when the deviation is strictly inside
    the tolerance.
    """
    checks: List[MarginalCheck] = []
    for key in SHARE_KEYS:
        empirical = _mean_or_none(students[key]) if key in students else None
        label = "female" if key == "gender" else key
        checks.append(_check(f"share:{label}", profile.group_shares[key], empirical, tol, 100.0))

    dropout = students["dropout"] if "dropout" in students else pd.Series(dtype=float)
    checks.append(
        _check(
            "dropout:overall",
            profile.implied_overall_dropout(),
            _mean_or_none(dropout),
            dropout_tol,
            100.0,
            note=f"published {profile.overall_dropout:.3f}; target implied by group rates",
        )
    )
    for attribute in PROTECTED_ATTRIBUTES:
        rate = profile.group_dropout[attribute]
        for value, target, suffix in ((1, rate.group, "group"), (0, rate.complement, "complement")):
            if len(students):
                empirical = _mean_or_none(dropout[students[attribute] == value])
            else:
                empirical = None
            checks.append(_check(f"dropout:{attribute}:{suffix}", target, empirical, dropout_tol, 100.0))

    checks.append(
        _check("mean_age", profile.mean_age, _mean_or_none(students["age"]) if "age" in students else None, age_tol, 1.0)
    )
    report = MarginalReport(format=profile.format, n=len(students), checks=checks)
    if not report.all_passed:
        logger.info(
            "%d of %d marginals outside tolerance for %s",
            len(report.failures()),
            len(checks),
            profile.format,
        )
    return report
