"""
Unit-Root Estimators
Exact tau-quantile (check-loss) and least-squares estimates of beta with their scaled errors
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from stochastics.errors import DomainError, UnidentifiedError
from stochastics.processes import SeriesSample

logger = logging.getLogger(__name__)

INTERCEPT_MAX_ITER = 20
INTERCEPT_TOL = 1e-10


class EstimatorMethod(str, Enum):
    QUANTILE = "quantile"
    LSE = "lse"


@dataclass(frozen=True)
class EstimateResult:
    """
    Estimated beta with the scaled error the limit theory describes.

    scaled_error is a_n sqrt(n) (beta_hat - beta) for the quantile method and
    n (beta_hat - beta) for least squares; nan when the true beta is unknown.
    """
    beta_hat: float
    method: EstimatorMethod
    scaled_error: float
    objective_at_min: float
    minimizing_interval: Tuple[float, float]
    tau: Optional[float] = None
    q_tau: Optional[float] = None
    iterations: int = 0

    @property
    def label(self) -> str:
        if self.method is EstimatorMethod.QUANTILE:
            return f"QuantileTau({self.tau:g})"
        return "LSE"

    def to_dict(self) -> dict:
        data = asdict(self)
        data["method"] = self.method.value
        data["label"] = self.label
        data["minimizing_interval"] = list(self.minimizing_interval)
        return data


def check_loss(residuals: np.ndarray, tau: float) -> np.ndarray:
    """rho_tau(y) = y (tau - I(y <= 0))."""
    return residuals * (tau - (residuals <= 0.0))


def _check_tau(tau: float):
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")


def check_loss_minimizer(response: np.ndarray, regressor: np.ndarray,
                         tau: float, slope_tol: float = 1e-12) -> Tuple[float, Tuple[float, float]]:
    """
    Exact minimizer of b -> sum rho_tau(response - b * regressor).

    The objective is convex and piecewise linear with breakpoints
    response_i / regressor_i. Starting from the slope at -inf, the walk adds
    |regressor_i| at each sorted breakpoint and stops at the first one where
    the slope is no longer negative. A flat stretch (slope exactly 0) returns
    the midpoint of the stretch.

    Returns:
        (minimizer, minimizing interval)

    Raises:
        UnidentifiedError: If every regressor is 0
    """
    _check_tau(tau)
    keep = regressor != 0.0
    if not np.any(keep):
        raise UnidentifiedError("all regressors are zero; objective is constant in beta")

    z = regressor[keep]
    breakpoints = response[keep] / z
    order = np.argsort(breakpoints, kind="stable")
    sorted_points = breakpoints[order]
    weights = np.abs(z)[order]

    initial_slope = -tau * np.sum(z[z > 0]) - (1.0 - tau) * np.sum(-z[z < 0])
    slopes = initial_slope + np.cumsum(weights)
    tol = slope_tol * float(np.sum(weights))

    j = int(np.searchsorted(slopes >= -tol, True))
    # last index of the tie group at sorted_points[j]
    j_last = int(np.searchsorted(sorted_points, sorted_points[j], side="right")) - 1
    lo = float(sorted_points[j])
    if abs(slopes[j_last]) <= tol and j_last + 1 < sorted_points.size:
        hi = float(sorted_points[j_last + 1])
        return 0.5 * (lo + hi), (lo, hi)
    return lo, (lo, lo)


def quantile_objective(series: SeriesSample, beta: float, tau: float, q_tau: float) -> float:
    """sum_i rho_tau(X_i - beta X_{i-1} - q_tau)."""
    residuals = series.current - beta * series.lagged - q_tau
    return float(np.sum(check_loss(residuals, tau)))


def quantile_subgradients(series: SeriesSample, beta: float, tau: float,
                          q_tau: float) -> Tuple[float, float]:
    """
    Left and right derivatives of the quantile objective at beta.

    Signs of the residuals are read off the breakpoints, so a beta equal to a
    breakpoint counts that residual as exactly zero.
    """
    z = series.lagged
    keep = z != 0.0
    z = z[keep]
    points = (series.current[keep] - q_tau) / z
    # residual sign = sign(z) * sign(point - beta)
    side = np.sign(z) * np.sign(points - beta)
    derivative = np.where(side > 0, -z * tau, -z * (tau - 1.0))
    at_point = side == 0
    left = np.where(z > 0, -z * tau, -z * (tau - 1.0))
    right = np.where(z > 0, -z * (tau - 1.0), -z * tau)
    left_total = float(np.sum(np.where(at_point, left, derivative)))
    right_total = float(np.sum(np.where(at_point, right, derivative)))
    return left_total, right_total


def _scaled_quantile_error(series: SeriesSample, beta_hat: float) -> float:
    if series.beta_true is None or not math.isfinite(series.beta_true):
        return math.nan
    return float(series.a_n * math.sqrt(series.n) * (beta_hat - series.beta_true))


def quantile_estimate(series: SeriesSample, tau: float, q_tau: Optional[float] = None,
                      estimate_intercept: bool = False,
                      max_iter: int = INTERCEPT_MAX_ITER,
                      tol: float = INTERCEPT_TOL) -> EstimateResult:
    """
    tau-quantile estimate beta_hat = argmin sum rho_tau(X_i - beta X_{i-1} - q_tau).

    With a known intercept the breakpoint walk gives the exact global
    minimizer. With estimate_intercept the beta-step and the q-step (sample
    tau-quantile of the residuals) alternate until the objective changes by
    less than `tol` or `max_iter` rounds have run.

    Args:
        series: Observed path
        tau: Quantile level in (0, 1)
        q_tau: F^{-1}(tau); required unless estimate_intercept is set
        estimate_intercept: Estimate q_tau jointly
        max_iter: Alternation cap
        tol: Objective-change stopping rule

    Returns:
        EstimateResult

    Raises:
        UnidentifiedError: If X_{i-1} = 0 for every i
    """
    _check_tau(tau)
    if q_tau is None and not estimate_intercept:
        raise DomainError("q_tau is required unless estimate_intercept is set")

    y = series.current
    z = series.lagged
    q = 0.0 if q_tau is None else float(q_tau)

    beta_hat, interval = check_loss_minimizer(y - q, z, tau)
    objective = quantile_objective(series, beta_hat, tau, q)
    iterations = 1

    if estimate_intercept:
        ones = np.ones(series.n)
        for iterations in range(2, max_iter + 1):
            q, _ = check_loss_minimizer(y - beta_hat * z, ones, tau)
            beta_hat, interval = check_loss_minimizer(y - q, z, tau)
            updated = quantile_objective(series, beta_hat, tau, q)
            converged = abs(objective - updated) < tol
            objective = updated
            if converged:
                break
        logger.debug(f"Intercept estimated in {iterations} rounds: q={q:.6g}")

    return EstimateResult(
        beta_hat=float(beta_hat),
        method=EstimatorMethod.QUANTILE,
        scaled_error=_scaled_quantile_error(series, beta_hat),
        objective_at_min=objective,
        minimizing_interval=(float(interval[0]), float(interval[1])),
        tau=float(tau),
        q_tau=float(q),
        iterations=iterations,
    )


def lse_estimate(series: SeriesSample) -> EstimateResult:
    """
    Least squares beta_hat = sum X_{i-1} X_i / sum X_{i-1}^2.

    Raises:
        UnidentifiedError: If sum X_{i-1}^2 = 0
    """
    z = series.lagged
    denominator = float(np.dot(z, z))
    if denominator == 0.0:
        raise UnidentifiedError("sum of squared regressors is zero")
    beta_hat = float(np.dot(z, series.current)) / denominator
    residuals = series.current - beta_hat * z
    scaled = series.n * (beta_hat - series.beta_true) if math.isfinite(series.beta_true) else math.nan
    return EstimateResult(
        beta_hat=beta_hat,
        method=EstimatorMethod.LSE,
        scaled_error=float(scaled),
        objective_at_min=float(np.dot(residuals, residuals)),
        minimizing_interval=(beta_hat, beta_hat),
    )


def lse_identity_sides(series: SeriesSample) -> Tuple[float, float]:
    """
    Both sides of n(beta_hat - 1) (sum X_{i-1}^2 / a_n^2) / n
    = (X_n^2 - X_0^2 - sum eps_i^2) / (2 a_n^2) for a unit-root path.
    """
    result = lse_estimate(series)
    a2 = series.a_n ** 2
    z = series.lagged
    lhs = series.n * (result.beta_hat - 1.0) * (float(np.dot(z, z)) / a2) / series.n
    rhs = 0.5 * (series.x[-1] ** 2 / a2 - series.x[0] ** 2 / a2
                 - float(np.dot(series.eps, series.eps)) / a2)
    return float(lhs), float(rhs)


def estimate(series: SeriesSample, method: EstimatorMethod = EstimatorMethod.QUANTILE,
             tau: float = 0.5, q_tau: Optional[float] = None,
             estimate_intercept: bool = False) -> EstimateResult:
    """Dispatch to the quantile or least-squares estimator."""
    method = EstimatorMethod(method)
    if method is EstimatorMethod.LSE:
        return lse_estimate(series)
    return quantile_estimate(series, tau, q_tau, estimate_intercept=estimate_intercept)
