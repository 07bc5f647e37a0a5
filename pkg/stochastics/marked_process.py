"""
Marked Empirical Processes
alpha_n(x), the residual process, the long-memory recentered statistic and sup functionals
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from stochastics.distributions import ReferenceDistribution
from stochastics.errors import DomainError
from stochastics.processes import FLOAT_FORMAT, SeriesSample

logger = logging.getLogger(__name__)

GRID_HALF_WIDTH = 3.0
GRID_POINTS = 241
BOUNDARY_TAIL = 1e-8

WEIGHT_IDS = ("identity", "bounded_smooth", "constant", "zero", "custom")


class CurveKind(str, Enum):
    TRUE_INNOVATIONS = "TrueInnovations"
    RESIDUAL = "Residual"
    RESIDUAL_RECENTERED = "ResidualRecentered"


class NormKind(str, Enum):
    SQRT_N = "sqrt_n"
    A_N = "a_n"


class SupMode(str, Enum):
    SIGNED = "signed"
    ABS = "abs"


@dataclass(frozen=True)
class WeightFunction:
    """
    Mark weight g, Lipschitz on the real line.

    `custom` interpolates a table linearly and holds the end values outside
    it; its Lipschitz constant is the steepest table slope.
    """
    g_id: str
    scale: float = 1.0
    knots: Optional[tuple] = None
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.g_id not in WEIGHT_IDS:
            raise DomainError(f"unknown g_id '{self.g_id}'; expected one of {', '.join(WEIGHT_IDS)}")
        if not math.isfinite(self.scale):
            raise DomainError("weight scale must be finite")
        if self.g_id == "custom":
            if self.knots is None or self.values is None or len(self.knots) != len(self.values):
                raise DomainError("custom weight needs equally long knots and values")
            if len(self.knots) < 2:
                raise DomainError("custom weight needs at least two knots")
            if not np.all(np.diff(np.asarray(self.knots, dtype=float)) > 0):
                raise DomainError("custom weight knots must be strictly increasing")
            if not math.isfinite(self.lipschitz_constant):
                raise DomainError("custom weight table is not Lipschitz")

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.g_id == "identity":
            out = u.copy()
        elif self.g_id == "bounded_smooth":
            out = u / (1.0 + u * u)
        elif self.g_id == "constant":
            out = np.ones_like(u)
        elif self.g_id == "zero":
            out = np.zeros_like(u)
        else:
            out = np.interp(u, np.asarray(self.knots, dtype=float), np.asarray(self.values, dtype=float))
        return out * self.scale if self.scale != 1.0 else out

    @property
    def lipschitz_constant(self) -> float:
        if self.g_id in ("identity", "bounded_smooth"):
            base = 1.0
        elif self.g_id in ("constant", "zero"):
            base = 0.0
        else:
            slopes = np.diff(np.asarray(self.values, dtype=float)) / np.diff(np.asarray(self.knots, dtype=float))
            base = float(np.max(np.abs(slopes)))
        return base * abs(self.scale)

    @property
    def is_zero(self) -> bool:
        return self.g_id == "zero" or self.scale == 0.0

    def scaled(self, factor: float) -> "WeightFunction":
        return WeightFunction(self.g_id, self.scale * factor, self.knots, self.values)


def weight_function(g_id: str, scale: float = 1.0, knots: Optional[Sequence[float]] = None,
                    values: Optional[Sequence[float]] = None) -> WeightFunction:
    return WeightFunction(
        g_id,
        float(scale),
        tuple(float(k) for k in knots) if knots is not None else None,
        tuple(float(v) for v in values) if values is not None else None,
    )


def mark_grid(A: float = GRID_HALF_WIDTH, points: int = GRID_POINTS) -> np.ndarray:
    """Evenly spaced marks on [-A, A]; a single point is the mark 0."""
    if not A > 0:
        raise DomainError(f"A must be positive, got {A}")
    if points < 1:
        raise DomainError(f"need at least 1 grid point, got {points}")
    if points == 1:
        return np.zeros(1)
    return np.linspace(-A, A, int(points))


@dataclass(frozen=True)
class MarkedCurve:
    """x -> statistic(x) / norm on an ascending mark grid."""
    x_grid: np.ndarray
    values: np.ndarray
    norm: float
    norm_kind: NormKind
    kind: CurveKind
    g_id: str
    F_id: str
    boundary_bound: float = 0.0

    def __post_init__(self):
        if self.x_grid.ndim != 1 or self.x_grid.size < 1:
            raise DomainError("mark grid needs at least one point")
        if not np.all(np.diff(self.x_grid) > 0):
            raise DomainError("mark grid must be strictly ascending")
        if self.values.shape != self.x_grid.shape:
            raise DomainError("values and grid differ in length")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("curve values must be finite")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x_grid, "value": self.values})


CdfLike = Union[ReferenceDistribution, Callable[[np.ndarray], np.ndarray]]


def _cdf(F: CdfLike) -> Callable[[np.ndarray], np.ndarray]:
    return F.cdf if isinstance(F, ReferenceDistribution) else F


def _F_id(F: CdfLike) -> str:
    return F.F_id if isinstance(F, ReferenceDistribution) else getattr(F, "__name__", "custom")


def _as_grid(x_grid) -> np.ndarray:
    grid = np.asarray(x_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or not np.all(np.diff(grid) > 0):
        raise DomainError("mark grid must be a nonempty strictly ascending vector")
    return grid


def _norm_value(series: SeriesSample, norm: NormKind) -> float:
    return series.a_n if NormKind(norm) is NormKind.A_N else math.sqrt(series.n)


def mark_weights(series: SeriesSample, g: WeightFunction) -> np.ndarray:
    """g(X_{i-1}/a_n) for i = 1..n."""
    return g(series.lagged / series.a_n)


def marked_sweep(innovations: np.ndarray, weights: np.ndarray, cdf_values: np.ndarray,
                 x_grid: np.ndarray) -> np.ndarray:
    """
    sum_i w_i (I(e_i <= x) - F(x)) for every grid x.

    Sorts the innovations once and reads prefix sums of the weights in that
    order at each grid point.
    """
    order = np.argsort(innovations, kind="stable")
    sorted_innovations = innovations[order]
    prefix = np.concatenate(([0.0], np.cumsum(weights[order])))
    counts = np.searchsorted(sorted_innovations, x_grid, side="right")
    return prefix[counts] - cdf_values * np.sum(weights)


def marked_double_loop(innovations: np.ndarray, weights: np.ndarray, F: CdfLike,
                       x_grid) -> np.ndarray:
    """O(n |grid|) evaluation of the same sums, one term at a time."""
    cdf = _cdf(F)
    grid = np.asarray(x_grid, dtype=float)
    out = np.zeros(grid.size)
    for m, x in enumerate(grid):
        fx = float(cdf(np.asarray(x)))
        total = 0.0
        for e, w in zip(innovations, weights):
            total += w * ((1.0 if e <= x else 0.0) - fx)
        out[m] = total
    return out


def boundary_decay_bound(series: SeriesSample, g: WeightFunction, norm: NormKind = NormKind.SQRT_N,
                         tail: float = BOUNDARY_TAIL) -> float:
    """Bound on |curve| wherever F(x) < tail or F(x) > 1 - tail."""
    return float(np.sum(np.abs(mark_weights(series, g))) * tail / _norm_value(series, norm))


def _curve(series: SeriesSample, innovations: np.ndarray, g: WeightFunction, F: CdfLike,
           x_grid, norm: NormKind, kind: CurveKind) -> MarkedCurve:
    grid = _as_grid(x_grid)
    norm = NormKind(norm)
    weights = mark_weights(series, g)
    raw = marked_sweep(innovations, weights, _cdf(F)(grid), grid)
    scale = _norm_value(series, norm)
    return MarkedCurve(
        x_grid=grid,
        values=raw / scale,
        norm=scale,
        norm_kind=norm,
        kind=kind,
        g_id=g.g_id,
        F_id=_F_id(F),
        boundary_bound=float(np.sum(np.abs(weights)) * BOUNDARY_TAIL / scale),
    )


def marked_empirical(series: SeriesSample, g: WeightFunction, F: CdfLike, x_grid,
                     norm: NormKind = NormKind.SQRT_N) -> MarkedCurve:
    """
    alpha_n(x) / norm with alpha_n(x) = sum_i g(X_{i-1}/a_n) (I(eps_i <= x) - F(x)).

    Args:
        series: Path carrying its true innovations
        g: Mark weight
        F: Reference CDF (ReferenceDistribution or vectorized callable)
        x_grid: Ascending marks
        norm: sqrt_n (short memory) or a_n (long memory)
    """
    return _curve(series, series.eps, g, F, x_grid, norm, CurveKind.TRUE_INNOVATIONS)


def residuals(series: SeriesSample, beta_hat: float) -> np.ndarray:
    """eps_hat_i = X_i - beta_hat X_{i-1}; the true innovations when beta_hat is the generating beta."""
    if beta_hat == series.beta_true:
        return series.eps
    return series.current - beta_hat * series.lagged


def residual_marked_empirical(series: SeriesSample, beta_hat: float, g: WeightFunction,
                              F: CdfLike, x_grid, norm: NormKind = NormKind.SQRT_N) -> MarkedCurve:
    """The marked process with residuals eps_hat_i in place of eps_i."""
    return _curve(series, residuals(series, beta_hat), g, F, x_grid, norm, CurveKind.RESIDUAL)


def recentered_residual_statistic(series: SeriesSample, beta_hat: float, g: WeightFunction,
                                  F: CdfLike, x_grid,
                                  f: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> MarkedCurve:
    """
    [alpha_hat_n(x) - f(x) (beta_hat - beta) sum_i g(X_{i-1}/a_n) X_{i-1}] / a_n.

    Args:
        series: Long-memory path
        beta_hat: Estimate of beta
        g: Mark weight
        F: Reference CDF of eps
        x_grid: Ascending marks
        f: Density evaluator (default: the density of F)
    """
    if series.spec is not None and not series.spec.is_long_memory:
        raise DomainError("recentered statistic needs a long-memory moving-average spec")
    if f is None:
        if not isinstance(F, ReferenceDistribution):
            raise DomainError("a density f is required when F is a bare callable")
        f = F.pdf

    grid = _as_grid(x_grid)
    residual = residual_marked_empirical(series, beta_hat, g, F, grid, NormKind.A_N)
    drift = (beta_hat - series.beta_true) * float(np.sum(mark_weights(series, g) * series.lagged))
    values = residual.values - np.asarray(f(grid), dtype=float) * drift / series.a_n
    return MarkedCurve(
        x_grid=grid,
        values=values,
        norm=series.a_n,
        norm_kind=NormKind.A_N,
        kind=CurveKind.RESIDUAL_RECENTERED,
        g_id=g.g_id,
        F_id=_F_id(F),
        boundary_bound=residual.boundary_bound,
    )


def sup_functional(curve: Union[MarkedCurve, np.ndarray], mode: SupMode = SupMode.SIGNED) -> float:
    """max of the values (signed) or of their absolute values (abs)."""
    values = curve.values if isinstance(curve, MarkedCurve) else np.asarray(curve, dtype=float)
    if values.size == 0:
        raise DomainError("sup of an empty curve")
    if SupMode(mode) is SupMode.ABS:
        return float(np.max(np.abs(values)))
    return float(np.max(values))


def decomposition_remainder(series: SeriesSample, beta_hat: float, g: WeightFunction,
                            F: CdfLike, x_grid) -> float:
    """
    sup_x |alpha_hat_n(x) - alpha_n(x) - sum_i g(X_{i-1}/a_n) [F(x + (beta_hat - beta) X_{i-1}) - F(x)]| / sqrt(n).
    """
    grid = _as_grid(x_grid)
    cdf = _cdf(F)
    weights = mark_weights(series, g)
    shift = (beta_hat - series.beta_true) * series.lagged
    drift = (cdf(grid[None, :] + shift[:, None]) - cdf(grid)[None, :]).T @ weights
    residual = residual_marked_empirical(series, beta_hat, g, F, grid).values
    true = marked_empirical(series, g, F, grid).values
    remainder = residual - true - drift / math.sqrt(series.n)
    return float(np.max(np.abs(remainder)))


def export_curve_csv(curve: MarkedCurve, path: Union[str, Path]) -> Path:
    """Write the curve as columns x, value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
