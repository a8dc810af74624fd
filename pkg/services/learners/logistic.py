"""L2-regularised logistic regression fitted by damped Newton iterations."""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.core.errors import DataError, NonFinite, SingleClass
from services.learners.model import TrainedModel


logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
ARMIJO_SHRINK = 0.5
MIN_STEP = 1e-10
HESSIAN_JITTER = 1e-9


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def lr_objective(
    beta: np.ndarray, X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float
) -> Tuple[float, np.ndarray]:
    """Weighted negative log-likelihood plus (l2/2)||beta[1:]||^2, and its gradient.

    Args:
        beta: intercept followed by one coefficient per column of X
        X: n x d design matrix without the intercept column
        y: binary labels
        w: per-sample weights
        l2: ridge strength; the intercept is not penalised

    Returns:
        (loss, gradient) with the gradient shaped like ``beta``
    """
    eta = beta[0] + X @ beta[1:]
    loss = float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))
    loss += 0.5 * l2 * float(beta[1:] @ beta[1:])
    residual = w * (expit(eta) - y)
    grad = np.empty_like(beta)
    grad[0] = residual.sum()
    grad[1:] = X.T @ residual + l2 * beta[1:]
    return loss, grad


def _normalised_weights(weights: Optional[Sequence[float]], n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or (w < 0).any() or w.sum() <= 0:
        raise DataError("sample weights must be non-negative, positive in total, one per row")
    return w * (n / w.sum())


def train_lr(
    X: np.ndarray,
    y: Sequence[int],
    weights: Optional[Sequence[float]] = None,
    l2: float = 1.0,
    feature_names: Optional[Sequence[str]] = None,
    max_iter: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
) -> TrainedModel:
    """Fit logistic regression from a zero start.

    Newton directions on the penalised objective with Armijo backtracking.
    Weights are rescaled to unit mean first. Stops when the gradient norm
    drops to ``tol``; hitting ``max_iter`` leaves status ``unconverged``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if y.shape != (n,):
        raise DataError(f"{y.shape[0]} labels for {n} rows")
    if not np.isfinite(X).all():
        raise DataError("logistic regression input contains non-finite values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be binary")
    if y.min() == y.max():
        raise SingleClass(f"all {n} labels are {int(y[0])}")
    if l2 < 0:
        raise DataError("l2 strength must be non-negative")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(d))

    w = _normalised_weights(weights, n)
    Xa = _with_intercept(X)
    penalty = np.full(d + 1, float(l2))
    penalty[0] = 0.0

    beta = np.zeros(d + 1)
    loss, grad = lr_objective(beta, X, y, w, l2)
    initial_loss = loss
    status = "unconverged"
    iterations = 0
    while True:
        if np.linalg.norm(grad) <= tol:
            status = "converged"
            break
        if iterations >= max_iter:
            break
        iterations += 1
        p = expit(Xa @ beta)
        s = w * p * (1.0 - p)
        hessian = (Xa * s[:, None]).T @ Xa
        hessian[np.diag_indices_from(hessian)] += penalty + HESSIAN_JITTER
        try:
            direction = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(hessian, grad, rcond=None)[0]
        slope = float(grad @ direction)
        if not np.isfinite(slope) or slope <= 0:
            direction, slope = grad, float(grad @ grad)

        step = 1.0
        while step >= MIN_STEP:
            candidate = beta - step * direction
            new_loss, new_grad = lr_objective(candidate, X, y, w, l2)
            if not np.isfinite(new_loss):
                raise NonFinite(f"logistic loss diverged at iteration {iterations}")
            if new_loss <= loss - ARMIJO_C1 * step * slope:
                break
            step *= ARMIJO_SHRINK
        else:
            # line search stalled at machine precision
            break
        beta, loss, grad = candidate, new_loss, new_grad

    if not np.isfinite(beta).all():
        raise NonFinite("logistic coefficients are not finite")
    if status != "converged":
        logger.warning(
            "Logistic regression (l2=%g) stopped unconverged after %d iterations, |grad|=%.2e",
            l2,
            iterations,
            float(np.linalg.norm(grad)),
        )
    return TrainedModel(
        kind="LR",
        feature_names=names,
        hyperparameters={"l2": float(l2)},
        lr_weights=beta,
        status=status,
        training_meta={
            "seed": seed,
            "iterations": iterations,
            "gradient_norm": float(np.linalg.norm(grad)),
            "initial_loss": initial_loss,
            "final_loss": loss,
        },
    )
