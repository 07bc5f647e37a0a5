"""
Limit Laws
Monte Carlo samplers of stable paths, fractional Brownian motion, the Kiefer-type mark field
and the stochastic-integral functionals assembled from them
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import fft as sp_fft
from scipy import integrate, linalg, signal

from stochastics.distributions import ReferenceDistribution, reference_by_id
from stochastics.errors import DomainError, NumericalError, RejectedDrawError
from stochastics.innovations import (
    Family,
    InnovationSpec,
    NormalizerRegime,
    SETTINGS,
    _check_stable_params,
    _stable_variates,
    generate_innovations,
    ma_coefficients,
    noise_variance,
    normalizer_a_n,
    normalizer_regime,
    truncation_for,
)
from stochastics.marked_process import SupMode, WeightFunction, mark_grid, sup_functional, weight_function
from stochastics.processes import FLOAT_FORMAT
from stochastics.streams import NoiseStream, RandomSource, as_generator

logger = logging.getLogger(__name__)

TIME_STEPS = 4096
MIN_TIME_STEPS = 16
PRELIMIT_BLOCK = 4
REJECTION_THRESHOLD = 1e-12
CHOLESKY_MAX = 2 ** 12
EMBEDDING_TOL = -1e-9
PSD_TOL = -1e-8
MAX_RESAMPLES = 100

# Innovations behind the LongRunEstimate covariance
LONG_RUN_STREAM = NoiseStream(seed=0x10_96_0A, stream_id=0)


class CovModel(str, Enum):
    PLUGIN_IID = "PlugInIID"
    LONG_RUN = "LongRunEstimate"


class JointMode(str, Enum):
    AUTO = "auto"
    INDEPENDENT = "independent"
    JOINT = "joint"


class LimitKind(str, Enum):
    MARKED_SUP = "marked_sup"
    RESIDUAL_QUANTILE_SUP = "residual_quantile_sup"
    RESIDUAL_LSE_SUP = "residual_lse_sup"
    QUANTILE_ERROR = "quantile_error"
    LSE_ERROR = "lse_error"
    LONG_MEMORY_SUP = "long_memory_sup"


# ============================================================================
# Grids
# ============================================================================

@dataclass(frozen=True)
class PathGrid:
    """Path values at t_j = j/k; `values` is (k+1,) or (paths, k+1)."""
    k: int
    values: np.ndarray

    def __post_init__(self):
        if self.k < MIN_TIME_STEPS:
            raise DomainError(f"k must be >= {MIN_TIME_STEPS}, got {self.k}")
        if self.values.shape[-1] != self.k + 1:
            raise DomainError(f"expected {self.k + 1} time points, got {self.values.shape[-1]}")
        if np.any(self.values[..., 0] != 0.0):
            raise DomainError("paths must start at 0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.k + 1) / self.k

    @property
    def paths(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def path(self, index: int) -> "PathGrid":
        return self if self.values.ndim == 1 else PathGrid(self.k, self.values[index])

    def scaled(self, factor: float) -> "PathGrid":
        return PathGrid(self.k, self.values * factor)


@dataclass(frozen=True)
class FieldGrid:
    """W(t_j, x_m); `values` is (k+1, marks) or (paths, k+1, marks)."""
    k: int
    x_grid: np.ndarray
    values: np.ndarray
    cov_model: CovModel

    def __post_init__(self):
        if self.k < MIN_TIME_STEPS:
            raise DomainError(f"k must be >= {MIN_TIME_STEPS}, got {self.k}")
        if self.values.shape[-2:] != (self.k + 1, self.x_grid.size):
            raise DomainError("field values do not match the (time, mark) grid")
        if np.any(self.values[..., 0, :] != 0.0):
            raise DomainError("field must vanish at t = 0")

    def mark_index(self, x: float) -> int:
        hits = np.flatnonzero(np.isclose(self.x_grid, x, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise DomainError(f"mark {x} is not on the field grid")
        return int(hits[0])

    def at(self, x: float) -> PathGrid:
        """Time path t -> W(t, x)."""
        return PathGrid(self.k, self.values[..., self.mark_index(x)])


def time_integral(values: np.ndarray, k: int) -> np.ndarray:
    """Trapezoid rule on [0, 1] over the last axis."""
    return integrate.trapezoid(values, dx=1.0 / k, axis=-1)


# ============================================================================
# Stable Levy paths
# ============================================================================

def _stable_increments(alpha: float, skew: float, k: int, rng: np.random.Generator,
                       paths: Optional[int]) -> np.ndarray:
    shape = (k,) if paths is None else (paths, k)
    return _stable_variates(float(alpha), float(skew), shape, rng) * k ** (-1.0 / alpha)


def _path_from_increments(increments: np.ndarray) -> np.ndarray:
    zeros = np.zeros(increments.shape[:-1] + (1,))
    return np.concatenate((zeros, np.cumsum(increments, axis=-1)), axis=-1)


def simulate_stable_path(alpha: float, skew: float, k: int, stream: RandomSource, *,
                         paths: Optional[int] = None, unit_variance: bool = False) -> PathGrid:
    """
    S(t_j) = k^{-1/alpha} sum_{i <= j} zeta_i with zeta_i i.i.d. stable(alpha, skew).

    At alpha = 2 the increments have variance 2/k; unit_variance rescales to Brownian motion.
    """
    _check_stable_params(alpha, skew)
    if unit_variance and alpha != 2.0:
        raise DomainError("unit_variance only applies at alpha = 2")
    increments = _stable_increments(alpha, skew, k, as_generator(stream), paths)
    if unit_variance:
        increments = increments / math.sqrt(2.0)
    return PathGrid(int(k), _path_from_increments(increments))


def stable_path_with_square(alpha: float, skew: float, k: int,
                            stream: RandomSource) -> Tuple[PathGrid, float]:
    """Stable path together with the sum of its squared increments, from the same draws."""
    _check_stable_params(alpha, skew)
    increments = _stable_increments(alpha, skew, k, as_generator(stream), None)
    return PathGrid(int(k), _path_from_increments(increments)), float(np.dot(increments, increments))


# ============================================================================
# Fractional Brownian motion
# ============================================================================

def fgn_autocovariance(hurst: float, lags: np.ndarray) -> np.ndarray:
    """Autocovariance of unit-variance fractional Gaussian noise."""
    h = np.abs(np.asarray(lags, dtype=float))
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(h + 1) ** two_h - 2.0 * h ** two_h + np.abs(h - 1) ** two_h)


def fbm_covariance(s, t, hurst: float):
    """Cov(Z(s), Z(t)) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * (s ** two_h + t ** two_h - np.abs(t - s) ** two_h)


def simulate_fbm(theta: float, k: int, stream: RandomSource, *,
                 paths: Optional[int] = None) -> PathGrid:
    """
    Fractional Brownian motion with Hurst index H = 3/2 - theta on t_j = j/k.

    Davies-Harte circulant embedding of the increment covariance. When the
    embedding spectrum dips below -1e-9 the increments come from a dense
    Cholesky factor instead, which is limited to k <= 2^12.

    Raises:
        DomainError: If theta is outside (1/2, 1]
        NumericalError: If the Cholesky fallback is needed for k > 2^12
    """
    if not 0.5 < theta <= 1.0:
        raise DomainError(f"theta must lie in (1/2, 1], got {theta}")
    k = int(k)
    hurst = 1.5 - theta
    gamma = fgn_autocovariance(hurst, np.arange(k + 1))
    row = np.concatenate((gamma, gamma[-2:0:-1]))
    spectrum = sp_fft.fft(row).real
    rng = as_generator(stream)
    count = 1 if paths is None else int(paths)

    if spectrum.min() < EMBEDDING_TOL:
        if k > CHOLESKY_MAX:
            raise NumericalError(
                f"circulant embedding is not nonnegative and k={k} exceeds the "
                f"Cholesky limit {CHOLESKY_MAX}; use a larger embedding")
        logger.warning(f"Negative embedding eigenvalue {spectrum.min():.3e}; using Cholesky")
        factor = linalg.cholesky(linalg.toeplitz(gamma[:k]), lower=True)
        noise = rng.standard_normal((count, k)) @ factor.T
    else:
        spectrum = np.clip(spectrum, 0.0, None)
        z = rng.standard_normal((count, 2 * k)) + 1j * rng.standard_normal((count, 2 * k))
        noise = sp_fft.fft(np.sqrt(spectrum / (2 * k)) * z, axis=-1).real[:, :k]

    values = _path_from_increments(noise * k ** (-hurst))
    return PathGrid(k, values[0] if paths is None else values)


def long_memory_scale(spec: InnovationSpec, n: int) -> float:
    """
    Exact standard deviation of S_n(1)/a_n for a (truncated) moving average.

    Scales unit fractional Brownian motion to the partial-sum limit.
    """
    truncation = truncation_for(spec, n)
    c = ma_coefficients(spec, truncation)
    weights = signal.fftconvolve(np.ones(n), c) if c.size > SETTINGS.direct_convolution_max else np.convolve(np.ones(n), c)
    variance = noise_variance(spec) * float(np.dot(weights, weights))
    return math.sqrt(variance) / normalizer_a_n(spec, n)


# ============================================================================
# Mark field W(t, x)
# ============================================================================

@dataclass(frozen=True)
class MarkCovariance:
    """Covariance Gamma(x, y) of one time increment of the field over the mark grid."""
    x_grid: np.ndarray
    gamma: np.ndarray
    cov_model: CovModel


def plugin_covariance(x_grid, F) -> MarkCovariance:
    """Gamma(x, y) = F(min(x, y)) - F(x) F(y), exact for i.i.d. innovations."""
    grid = np.asarray(x_grid, dtype=float)
    cdf = F.cdf if isinstance(F, ReferenceDistribution) else F
    fx = np.asarray(cdf(grid), dtype=float)
    gamma = np.minimum.outer(fx, fx) - np.outer(fx, fx)
    return MarkCovariance(grid, gamma, CovModel.PLUGIN_IID)


def long_run_covariance(eps: np.ndarray, x_grid, F, block: Optional[int] = None) -> MarkCovariance:
    """
    Batch-means estimate of the long-run covariance of I(eps_i <= x) - F(x).

    Blocks of length B = floor(sqrt(n)); Gamma = mean over blocks of the
    outer product of block sums, divided by B.
    """
    grid = np.asarray(x_grid, dtype=float)
    cdf = F.cdf if isinstance(F, ReferenceDistribution) else F
    eps = np.asarray(eps, dtype=float)
    length = int(block) if block is not None else int(math.isqrt(eps.size))
    blocks = eps.size // length
    if blocks < 2:
        raise DomainError("too few innovations for a batch-means covariance")
    centered = (eps[:blocks * length, None] <= grid[None, :]) - np.asarray(cdf(grid))[None, :]
    sums = centered.reshape(blocks, length, grid.size).sum(axis=1)
    gamma = sums.T @ sums / (blocks * length)
    return MarkCovariance(grid, gamma, CovModel.LONG_RUN)


def covariance_factor(gamma: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """
    L with L L^T = Gamma after symmetrization; eigenvalues in [tol, 0) are clipped.

    Raises:
        NumericalError: If an eigenvalue lies below tol
    """
    symmetric = 0.5 * (gamma + gamma.T)
    eigenvalues, vectors = linalg.eigh(symmetric)
    if eigenvalues.min() < tol:
        raise NumericalError(f"mark covariance is not positive semidefinite "
                             f"(min eigenvalue {eigenvalues.min():.3e})")
    return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def simulate_mark_field(k: int, x_grid, cov_model: CovModel,
                        F_or_mu: Union[MarkCovariance, ReferenceDistribution, Callable],
                        stream: RandomSource, *, paths: Optional[int] = None) -> FieldGrid:
    """
    W(t_j, x_m) = sum_{r <= j} G_r(x_m) / sqrt(k) with G_r i.i.d. N(0, Gamma).

    Args:
        k: Time steps
        x_grid: Ascending marks
        cov_model: PlugInIID or LongRunEstimate
        F_or_mu: A reference CDF (PlugInIID) or a precomputed MarkCovariance
        stream: Random source
        paths: Number of independent fields (None for one)
    """
    grid = np.asarray(x_grid, dtype=float)
    cov_model = CovModel(cov_model)
    if isinstance(F_or_mu, MarkCovariance):
        if F_or_mu.gamma.shape != (grid.size, grid.size):
            raise DomainError("covariance does not match the mark grid")
        covariance = F_or_mu
    elif cov_model is CovModel.PLUGIN_IID:
        covariance = plugin_covariance(grid, F_or_mu)
    else:
        raise DomainError("LongRunEstimate needs a precomputed MarkCovariance")

    factor = covariance_factor(covariance.gamma)
    shape = (int(k), grid.size) if paths is None else (int(paths), int(k), grid.size)
    increments = as_generator(stream).standard_normal(shape) @ factor.T
    zeros = np.zeros(increments.shape[:-2] + (1, grid.size))
    values = np.concatenate((zeros, np.cumsum(increments, axis=-2)), axis=-2) / math.sqrt(k)
    return FieldGrid(int(k), grid, values, cov_model)


# ============================================================================
# Forward-sum integrals and scalar limits
# ============================================================================

def stochastic_integral(integrand, integrator: Union[PathGrid, FieldGrid],
                        x: Optional[float] = None,
                        g: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """
    sum_j integrand(t_j) (I(t_{j+1}) - I(t_j)), integrand read at left endpoints.

    Args:
        integrand: Path values (array or PathGrid), e.g. g(S(t_j))
        integrator: A path, or a field (one mark via `x`, all marks otherwise)
        x: Mark of a field integrator
        g: Applied to the integrand values first

    Raises:
        DomainError: If the time grids differ
    """
    values = integrand.values if isinstance(integrand, PathGrid) else np.asarray(integrand, dtype=float)
    if g is not None:
        values = g(values)
    if values.shape[-1] != integrator.k + 1:
        raise DomainError(f"integrand has {values.shape[-1]} time points, integrator {integrator.k + 1}")
    left = values[..., :-1]

    if isinstance(integrator, FieldGrid):
        increments = np.diff(integrator.values, axis=-2)
        if x is not None:
            result = np.sum(left * increments[..., integrator.mark_index(x)], axis=-1)
        else:
            result = np.einsum("...j,...jm->...m", left, increments)
    else:
        result = np.sum(left * np.diff(integrator.values, axis=-1), axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def limit_quantile_error(s_path: PathGrid, field: Union[FieldGrid, PathGrid], q_tau: float,
                         f_at_qtau: float, threshold: float = REJECTION_THRESHOLD) -> float:
    """
    -(1/f(q)) * int S dW(., q) / int S^2 dt.

    Raises:
        DomainError: If f_at_qtau <= 0
        RejectedDrawError: If int S^2 dt < threshold
    """
    if not f_at_qtau > 0:
        raise DomainError(f"density at the quantile must be positive, got {f_at_qtau}")
    integrator = field.at(q_tau) if isinstance(field, FieldGrid) else field
    denominator = float(time_integral(s_path.values ** 2, s_path.k))
    if denominator < threshold:
        raise RejectedDrawError("degenerate int S^2 dt", denominator)
    numerator = stochastic_integral(s_path, integrator)
    return -(numerator / denominator) / f_at_qtau


def limit_lse_error(s_path: PathGrid, s_squared_draw: float,
                    threshold: float = REJECTION_THRESHOLD) -> float:
    """
    (S(1)^2 - s^2) / (2 int S^2 dt).

    Raises:
        RejectedDrawError: If int S^2 dt < threshold
    """
    if s_squared_draw < 0:
        raise DomainError(f"s_squared_draw must be nonnegative, got {s_squared_draw}")
    denominator = float(time_integral(s_path.values ** 2, s_path.k))
    if denominator < threshold:
        raise RejectedDrawError("degenerate int S^2 dt", denominator)
    return 0.5 * (float(s_path.values[-1]) ** 2 - s_squared_draw) / denominator


# ============================================================================
# Joint pre-limit
# ============================================================================

@dataclass(frozen=True)
class PrelimitDraw:
    s_path: PathGrid
    s_squared: float
    field: Optional[FieldGrid]


def prelimit_pair(spec: InnovationSpec, k: int, block: int, x_grid, F,
                  stream: RandomSource, cov_model: CovModel = CovModel.LONG_RUN) -> PrelimitDraw:
    """
    Joint (S, W, sum eps^2 / a_N^2) from N = k * block simulated innovations.

    S(t_j) = S_N(j block)/a_N and W(t_j, x) = sum_{i <= j block} (I(eps_i <= x) - F(x)) / sqrt(N),
    so S and W keep the dependence the model gives them. Pass x_grid=None to
    skip the field.
    """
    n_total = int(k) * int(block)
    draw = generate_innovations(spec, n_total, stream)
    eps = draw.eps
    a_total = normalizer_a_n(spec, n_total, draw.tail_index if spec.family is Family.GARCH11 else None)

    partial = np.add.accumulate(eps)[block - 1::block]
    s_path = PathGrid(int(k), np.concatenate(([0.0], partial)) / a_total)
    s_squared = float(np.dot(eps, eps)) / a_total ** 2

    field_grid = None
    if x_grid is not None:
        grid = np.asarray(x_grid, dtype=float)
        cdf = F.cdf if isinstance(F, ReferenceDistribution) else F
        marks = grid.size
        # first mark at or above each innovation
        first = np.searchsorted(grid, eps, side="left")
        cell = (np.arange(n_total) // block) * (marks + 1) + first
        counts = np.bincount(cell, minlength=int(k) * (marks + 1)).reshape(int(k), marks + 1)
        below = np.cumsum(counts, axis=1)[:, :marks]
        increments = below - block * np.asarray(cdf(grid), dtype=float)[None, :]
        values = np.concatenate((np.zeros((1, marks)), np.cumsum(increments, axis=0))) / math.sqrt(n_total)
        field_grid = FieldGrid(int(k), grid, values, CovModel(cov_model))

    return PrelimitDraw(s_path, s_squared, field_grid)


# ============================================================================
# Ensembles
# ============================================================================

class LimitParams(BaseModel):
    """Everything a limit functional needs besides the random stream."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    spec: InnovationSpec
    g_id: str = "identity"
    g_scale: float = 1.0
    F_id: str = "auto"
    A: float = Field(3.0, gt=0.0)
    grid_size: int = Field(241, ge=1)
    k: int = Field(TIME_STEPS, ge=MIN_TIME_STEPS)
    cov_model: CovModel = CovModel.PLUGIN_IID
    joint: JointMode = JointMode.AUTO
    block: int = Field(PRELIMIT_BLOCK, ge=1)
    tau: float = Field(0.5, gt=0.0, lt=1.0)
    q_tau: Optional[float] = None
    sup_mode: SupMode = SupMode.SIGNED
    n_ref: int = Field(8192, ge=1, description="Sample size fixing constants of the limit")
    rejection_threshold: float = Field(REJECTION_THRESHOLD, gt=0.0)
    table_draws: Optional[int] = Field(None, ge=1000, description="Override for CDF table sizes")


@dataclass(frozen=True)
class LimitSetup:
    """Resolved, draw-independent ingredients of one limit functional."""
    kind: LimitKind
    params: LimitParams
    g: WeightFunction
    F: ReferenceDistribution
    x_grid: np.ndarray
    field_grid: Optional[np.ndarray]
    x_index: Optional[np.ndarray]
    q_tau: Optional[float]
    f_at_qtau: Optional[float]
    f_grid: Optional[np.ndarray]
    source: str
    covariance: Optional[MarkCovariance]
    sigma: float
    root_n: bool


def table_options(params: LimitParams) -> dict:
    if params.table_draws is None:
        return {}
    return {"stable_draws": params.table_draws, "simulated_draws": params.table_draws}


def prepare_limit(kind: LimitKind, params: LimitParams,
                  reference: Optional[ReferenceDistribution] = None) -> LimitSetup:
    """
    Resolve weights, reference law, grids, sampling source and constants.

    Raises:
        DomainError: For a long-memory kind without a long-memory spec, or a
            quantile kind whose density at F^{-1}(tau) is not positive
    """
    kind = LimitKind(kind)
    spec = params.spec
    g = weight_function(params.g_id, params.g_scale)
    F = reference or reference_by_id(params.F_id, spec, params.n_ref, **table_options(params))
    x_grid = mark_grid(params.A, params.grid_size)

    needs_quantile = kind in (LimitKind.QUANTILE_ERROR, LimitKind.RESIDUAL_QUANTILE_SUP)
    needs_field = kind in (LimitKind.MARKED_SUP, LimitKind.QUANTILE_ERROR,
                           LimitKind.RESIDUAL_QUANTILE_SUP, LimitKind.RESIDUAL_LSE_SUP)

    q_tau = f_at_qtau = None
    if needs_quantile:
        q_tau = float(params.q_tau) if params.q_tau is not None else float(F.ppf(params.tau))
        f_at_qtau = float(F.pdf(q_tau))
        if not f_at_qtau > 0:
            raise DomainError(f"density of {F.F_id} at its {params.tau}-quantile {q_tau} is zero")

    field_grid = x_index = None
    if kind is LimitKind.QUANTILE_ERROR:
        field_grid = np.array([q_tau])
    elif kind is LimitKind.RESIDUAL_QUANTILE_SUP:
        field_grid = np.union1d(x_grid, [q_tau])
        x_index = np.searchsorted(field_grid, x_grid)
    elif needs_field:
        field_grid = x_grid

    f_grid = None
    if kind in (LimitKind.RESIDUAL_QUANTILE_SUP, LimitKind.RESIDUAL_LSE_SUP, LimitKind.LONG_MEMORY_SUP):
        f_grid = np.asarray(F.pdf(x_grid), dtype=float)

    sigma = 1.0
    if kind is LimitKind.LONG_MEMORY_SUP:
        if not spec.is_long_memory:
            raise DomainError("long_memory_sup needs a long-memory moving-average spec")
        source = "fbm"
        sigma = long_memory_scale(spec, params.n_ref)
    else:
        exact_stable = spec.family is Family.STABLE_IID and spec.alpha < 2.0
        if exact_stable and params.joint is not JointMode.JOINT:
            source = "stable"
        elif params.joint is JointMode.INDEPENDENT:
            source = "prelimit_independent"
        else:
            source = "prelimit_joint"

    covariance = None
    if needs_field and source in ("stable", "prelimit_independent"):
        if params.cov_model is CovModel.PLUGIN_IID:
            covariance = plugin_covariance(field_grid, F)
        else:
            eps = generate_innovations(spec, params.n_ref, LONG_RUN_STREAM).eps
            covariance = long_run_covariance(eps, field_grid, F)

    return LimitSetup(
        kind=kind,
        params=params,
        g=g,
        F=F,
        x_grid=x_grid,
        field_grid=field_grid,
        x_index=x_index,
        q_tau=q_tau,
        f_at_qtau=f_at_qtau,
        f_grid=f_grid,
        source=source,
        covariance=covariance,
        sigma=sigma,
        root_n=normalizer_regime(spec) is NormalizerRegime.ROOT_N,
    )


def _driving_noise(setup: LimitSetup, stream: NoiseStream) -> PrelimitDraw:
    params = setup.params
    spec = params.spec
    k = params.k

    if setup.source == "stable":
        s_path, s_squared = stable_path_with_square(spec.alpha, spec.skew, k, stream.child(0))
        field_grid = None
        if setup.field_grid is not None:
            field_grid = simulate_mark_field(k, setup.field_grid, params.cov_model,
                                             setup.covariance, stream.child(1))
        return PrelimitDraw(s_path, s_squared, field_grid)

    if setup.source == "prelimit_joint":
        return prelimit_pair(spec, k, params.block, setup.field_grid, setup.F, stream.child(0))

    draw = prelimit_pair(spec, k, params.block, None, setup.F, stream.child(0))
    field_grid = None
    if setup.field_grid is not None:
        field_grid = simulate_mark_field(k, setup.field_grid, params.cov_model,
                                         setup.covariance, stream.child(1))
    return PrelimitDraw(draw.s_path, draw.s_squared, field_grid)


def draw_limit(setup: LimitSetup, stream: NoiseStream) -> float:
    """
    One draw of the limit functional.

    Raises:
        RejectedDrawError: If the draw has a degenerate int S^2 dt
    """
    params = setup.params
    kind = setup.kind
    g = setup.g
    threshold = params.rejection_threshold

    if kind is LimitKind.LONG_MEMORY_SUP:
        z = simulate_fbm(params.spec.theta, params.k, stream.child(0)).scaled(setup.sigma)
        integral = stochastic_integral(g(z.values), z)
        return sup_functional(-setup.f_grid * integral, params.sup_mode)

    noise = _driving_noise(setup, stream)
    s_path = noise.s_path

    if kind is LimitKind.QUANTILE_ERROR:
        return limit_quantile_error(s_path, noise.field, setup.q_tau, setup.f_at_qtau, threshold)
    if kind is LimitKind.LSE_ERROR:
        return limit_lse_error(s_path, noise.s_squared, threshold)

    g_of_s = g(s_path.values)
    if kind is LimitKind.MARKED_SUP:
        return sup_functional(stochastic_integral(g_of_s, noise.field), params.sup_mode)

    drift = float(time_integral(g_of_s * s_path.values, params.k))
    if kind is LimitKind.RESIDUAL_QUANTILE_SUP:
        q_error = limit_quantile_error(s_path, noise.field, setup.q_tau, setup.f_at_qtau, threshold)
        martingale = stochastic_integral(g_of_s, noise.field)[setup.x_index]
        return sup_functional(setup.f_grid * q_error * drift + martingale, params.sup_mode)

    lse_error = limit_lse_error(s_path, noise.s_squared, threshold)
    values = setup.f_grid * lse_error * drift
    if setup.root_n:
        values = values + stochastic_integral(g_of_s, noise.field)
    return sup_functional(values, params.sup_mode)


def draw_with_resampling(setup: LimitSetup, stream: NoiseStream) -> Tuple[float, int]:
    """Retry degenerate draws on fresh sub-streams; returns (draw, rejections)."""
    for attempt in range(MAX_RESAMPLES):
        try:
            return draw_limit(setup, stream.child(attempt)), attempt
        except RejectedDrawError as e:
            logger.debug(f"Rejected draw on stream {stream.stream_id} (int S^2 dt = {e.value:.3e})")
    raise NumericalError(f"{MAX_RESAMPLES} consecutive rejected draws on stream {stream.stream_id}")


@dataclass(frozen=True)
class LimitEnsemble:
    """R draws of one limit functional plus the metadata needed to audit them."""
    kind: LimitKind
    draws: np.ndarray
    rejections: int
    k: int
    x_grid: np.ndarray
    cov_model: CovModel
    source: str
    seed: int
    stream_offset: int
    details: dict = field(default_factory=dict)

    @property
    def replications(self) -> int:
        return int(self.draws.size)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"replicate": np.arange(self.replications), "draw": self.draws})

    def metadata(self) -> dict:
        return {
            "kind": self.kind.value,
            "replications": self.replications,
            "rejections": self.rejections,
            "k": self.k,
            "x_grid": [float(x) for x in self.x_grid],
            "cov_model": self.cov_model.value,
            "source": self.source,
            "seed": self.seed,
            "stream_offset": self.stream_offset,
            **self.details,
        }


def limit_sup_statistic(kind: LimitKind, params: LimitParams, replications: int,
                        stream: NoiseStream, *, threads: int = 1,
                        reference: Optional[ReferenceDistribution] = None) -> LimitEnsemble:
    """
    R independent draws of a limit functional.

    Draw r uses stream.replicate(r); draws are collected in replicate order,
    so the ensemble does not depend on `threads`.

    Args:
        kind: Which limit functional
        params: Limit parameters
        replications: Number of draws R
        stream: Base stream; its stream_id is the offset of replicate 0
        threads: Worker threads
        reference: Reference law overriding params.F_id
    """
    if replications < 1:
        raise DomainError(f"replications must be >= 1, got {replications}")
    setup = prepare_limit(kind, params, reference)
    logger.info(f"Sampling {replications} draws of {setup.kind.value} "
                f"(source={setup.source}, k={params.k}, threads={threads})")

    def one(r: int) -> Tuple[float, int]:
        return draw_with_resampling(setup, stream.replicate(r))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replications)))
    else:
        results = [one(r) for r in range(replications)]

    rejections = sum(rejected for _, rejected in results)
    if rejections:
        logger.warning(f"{rejections} degenerate limit draws were resampled")

    details = {"g_id": setup.g.g_id, "F_id": setup.F.F_id, "sup_mode": params.sup_mode.value}
    if setup.q_tau is not None:
        details.update({"q_tau": setup.q_tau, "f_at_qtau": setup.f_at_qtau})
    if setup.source == "fbm":
        details["sigma"] = setup.sigma
    if setup.source.startswith("prelimit"):
        details["block"] = params.block

    return LimitEnsemble(
        kind=setup.kind,
        draws=np.array([value for value, _ in results], dtype=float),
        rejections=int(rejections),
        k=params.k,
        x_grid=setup.x_grid,
        cov_model=params.cov_model,
        source=setup.source,
        seed=stream.seed,
        stream_offset=stream.stream_id,
        details=details,
    )


def export_ensemble(ensemble: LimitEnsemble, out_dir: Union[str, Path], stem: str = "limit",
                    extra: Optional[dict] = None) -> Tuple[Path, Path]:
    """Write `<stem>_draws.csv` and `<stem>_metadata.json` (metadata merged with `extra`)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    draws_path = out_dir / f"{stem}_draws.csv"
    meta_path = out_dir / f"{stem}_metadata.json"
    ensemble.to_frame().to_csv(draws_path, index=False, float_format=FLOAT_FORMAT)
    with open(meta_path, "w") as f:
        json.dump({**ensemble.metadata(), **(extra or {})}, f, indent=2, sort_keys=True)
        f.write("\n")
    return draws_path, meta_path
