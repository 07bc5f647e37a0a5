"""
Innovation Generators
Stable i.i.d., GARCH(1,1) and linear moving-average innovations plus their normalizers a_n
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, signal, special

from stochastics.errors import DomainError
from stochastics.streams import NoiseStream, RandomSource, as_generator

logger = logging.getLogger(__name__)

GARCH_BURN_IN = 1000


@dataclass
class SamplerSettings:
    """Numerical knobs read at call time; backend.config.Config overrides them at startup."""
    kesten_draws: int = 1_000_000
    kesten_tol: float = 1e-3
    ma_min_truncation: int = 1000
    direct_convolution_max: int = 64


SETTINGS = SamplerSettings()


def configure_samplers(**overrides) -> SamplerSettings:
    """
    Update the shared sampler settings.

    Raises:
        DomainError: For an unknown setting name
    """
    for name, value in overrides.items():
        if not hasattr(SETTINGS, name):
            raise DomainError(f"unknown sampler setting '{name}'")
        setattr(SETTINGS, name, type(getattr(SETTINGS, name))(value))
    logger.debug(f"Sampler settings: {SETTINGS}")
    return SETTINGS


# Fixed stream for the moment expectations, so a_n does not depend on the replicate
MOMENT_STREAM = NoiseStream(seed=0x5EED_CAFE, stream_id=0)


class Family(str, Enum):
    STABLE_IID = "StableIID"
    GARCH11 = "Garch11"
    LINEAR_MA = "LinearMA"


class NoiseLaw(str, Enum):
    NORMAL = "normal"
    STUDENT_T = "student_t"
    TWO_POINT = "two_point"
    STABLE = "stable"


class SlowlyVarying(str, Enum):
    CONSTANT = "constant"
    LOG = "log"


class NormalizerRegime(str, Enum):
    """Which closed form a_n takes."""
    HEAVY_TAIL = "heavy_tail"        # n^{1/alpha}
    BOUNDARY = "boundary"            # sqrt(n log n)
    ROOT_N = "root_n"                # sqrt(n)
    LONG_MEMORY = "long_memory"      # n^{3/2 - theta} l(n)


class InnovationSpec(BaseModel):
    """
    Tagged description of one innovation model.

    Only the fields relevant to `family` are read; the rest keep their
    defaults. `coefficients` overrides c_j = j^{-theta} l(j) for LinearMA and
    fixes the truncation to its length.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Family
    alpha: float = Field(2.0, gt=0.0, le=2.0, description="Stable tail index")
    skew: float = Field(0.0, ge=-1.0, le=1.0, description="Stable skewness")
    omega: float = Field(1.0, description="GARCH intercept")
    a: float = Field(0.0, ge=0.0, description="GARCH coefficient on sigma^2")
    b: float = Field(0.0, ge=0.0, description="GARCH coefficient on eps^2")
    theta: float = Field(1.5, description="MA decay exponent")
    slowly_varying: SlowlyVarying = SlowlyVarying.CONSTANT
    truncation: Optional[int] = Field(None, ge=1, description="MA truncation length M")
    noise: NoiseLaw = NoiseLaw.NORMAL
    df: float = Field(5.0, gt=0.0, description="Student-t degrees of freedom")
    burn_in: int = Field(GARCH_BURN_IN, ge=0)
    coefficients: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check_family(self) -> "InnovationSpec":
        if self.family is Family.GARCH11:
            if not self.omega > 0:
                raise ValueError(f"omega must be > 0 for Garch11, got {self.omega}")
            if self.noise is NoiseLaw.STABLE:
                raise ValueError("Garch11 base noise must have a finite variance")
        if self.family is Family.LINEAR_MA:
            if not self.theta > 0.5:
                raise ValueError(f"theta must be > 1/2 for LinearMA, got {self.theta}")
            if self.theta < 1.0 and self.noise is NoiseLaw.STABLE and self.alpha < 2.0:
                raise ValueError("long-memory coefficients (theta < 1) need finite-variance noise")
        if self.coefficients is not None:
            if self.family is not Family.LINEAR_MA:
                raise ValueError("coefficients override only applies to LinearMA")
            if len(self.coefficients) == 0:
                raise ValueError("coefficients override must be nonempty")
            if not all(math.isfinite(c) for c in self.coefficients):
                raise ValueError("coefficients must be finite")
        return self

    @property
    def is_long_memory(self) -> bool:
        return (self.family is Family.LINEAR_MA and self.coefficients is None
                and self.theta < 1.0)


@dataclass(frozen=True)
class InnovationDraw:
    """One innovation vector plus the diagnostics its sampler produced."""
    eps: np.ndarray
    truncation_tail_mass: float = 0.0
    stationary: bool = True
    tail_index: float = math.inf
    truncation: Optional[int] = None


# ============================================================================
# Base noise
# ============================================================================

def _check_stable_params(alpha: float, skew: float):
    if not 0.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    if not -1.0 <= skew <= 1.0:
        raise DomainError(f"skew must lie in [-1, 1], got {skew}")


def _stable_variates(alpha: float, skew: float, size, rng: np.random.Generator) -> np.ndarray:
    """Chambers-Mallows-Stuck transform of a uniform angle and a unit exponential."""
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.exponential(1.0, size)

    if alpha == 2.0:
        # sin(2V)/sqrt(cos V) * sqrt(W / cos V) collapses to this; variance 2
        return 2.0 * np.sin(v) * np.sqrt(w)

    if alpha == 1.0:
        half_pi_skewed = np.pi / 2 + skew * v
        return (2 / np.pi) * (half_pi_skewed * np.tan(v)
                              - skew * np.log((np.pi / 2) * w * np.cos(v) / half_pi_skewed))

    zeta = skew * np.tan(np.pi * alpha / 2)
    shift = np.arctan(zeta) / alpha
    scale = (1 + zeta ** 2) ** (1 / (2 * alpha))
    return (scale * np.sin(alpha * (v + shift)) / np.cos(v) ** (1 / alpha)
            * (np.cos(v - alpha * (v + shift)) / w) ** ((1 - alpha) / alpha))


def sample_noise(spec: InnovationSpec, size, source: RandomSource) -> np.ndarray:
    """
    Draw the base noise eta for a spec.

    Args:
        spec: Innovation spec whose `noise` field selects the law
        size: Output shape
        source: NoiseStream or numpy Generator

    Returns:
        Array of i.i.d. draws
    """
    rng = as_generator(source)
    if spec.noise is NoiseLaw.NORMAL:
        return rng.standard_normal(size)
    if spec.noise is NoiseLaw.STUDENT_T:
        return rng.standard_t(spec.df, size)
    if spec.noise is NoiseLaw.TWO_POINT:
        return np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return _stable_variates(spec.alpha, spec.skew, size, rng)


def noise_variance(spec: InnovationSpec) -> float:
    """Variance of the base noise (inf when it does not exist)."""
    if spec.noise in (NoiseLaw.NORMAL, NoiseLaw.TWO_POINT):
        return 1.0
    if spec.noise is NoiseLaw.STUDENT_T:
        return spec.df / (spec.df - 2.0) if spec.df > 2.0 else math.inf
    return 2.0 if spec.alpha == 2.0 else math.inf


def noise_tail_index(spec: InnovationSpec) -> float:
    if spec.noise is NoiseLaw.STUDENT_T:
        return spec.df
    if spec.noise is NoiseLaw.STABLE and spec.alpha < 2.0:
        return spec.alpha
    return math.inf


# ============================================================================
# Stable i.i.d.
# ============================================================================

def sample_stable_iid(alpha: float, skew: float, n: int, stream: RandomSource) -> np.ndarray:
    """
    Draw n i.i.d. standard stable(alpha, skew) innovations.

    At alpha = 2 the output is N(0, 2).

    Raises:
        DomainError: If alpha, skew or n is out of range
    """
    _check_stable_params(alpha, skew)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return _stable_variates(float(alpha), float(skew), int(n), as_generator(stream))


# ============================================================================
# GARCH(1,1)
# ============================================================================

def _garch_log_terms(a: float, b: float, noise: NoiseLaw, df: float, draws: int) -> np.ndarray:
    noise_spec = InnovationSpec(family=Family.GARCH11, noise=noise, df=df)
    eta = sample_noise(noise_spec, draws, MOMENT_STREAM)
    with np.errstate(divide="ignore"):
        return np.log(a + b * eta ** 2)


@lru_cache(maxsize=64)
def _garch_log_moment(a: float, b: float, noise: NoiseLaw, df: float, draws: int) -> float:
    return float(np.mean(_garch_log_terms(a, b, noise, df, draws)))


def garch_log_moment(spec: InnovationSpec, draws: Optional[int] = None) -> float:
    """Monte Carlo estimate of E log(a + b eta^2); negative means stationary."""
    draws = SETTINGS.kesten_draws if draws is None else draws
    return _garch_log_moment(spec.a, spec.b, spec.noise, spec.df, int(draws))


@lru_cache(maxsize=64)
def _kesten_index(a: float, b: float, noise: NoiseLaw, df: float,
                  draws: int, tol: float) -> float:
    if b == 0.0:
        return math.inf
    log_terms = _garch_log_terms(a, b, noise, df, draws)
    if not np.mean(log_terms) < 0:
        return math.nan

    def log_moment(kappa: float) -> float:
        # log E (a + b eta^2)^{kappa/2}
        return float(special.logsumexp(0.5 * kappa * log_terms) - math.log(draws))

    lo, hi = 0.0, 2.0
    while log_moment(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 256.0:
            return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if log_moment(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kesten_index(spec: InnovationSpec, draws: Optional[int] = None, tol: Optional[float] = None) -> float:
    """
    Tail exponent kappa > 0 solving E (a + b eta^2)^{kappa/2} = 1.

    Bisection on the log of a Monte Carlo moment. Returns inf when b = 0 (no
    random multiplier) or when no root is bracketed below 256, and nan when
    E log(a + b eta^2) >= 0.
    """
    draws = SETTINGS.kesten_draws if draws is None else draws
    tol = SETTINGS.kesten_tol if tol is None else tol
    kappa = _kesten_index(spec.a, spec.b, spec.noise, spec.df, int(draws), float(tol))
    logger.debug(f"Kesten index for a={spec.a}, b={spec.b}: {kappa}")
    return kappa


def sample_garch(spec: InnovationSpec, n: int, stream: RandomSource,
                 moment_draws: Optional[int] = None) -> InnovationDraw:
    """
    Simulate eps_i = sigma_i eta_i with sigma_i^2 = omega + a sigma_{i-1}^2 + b eps_{i-1}^2.

    sigma_0^2 starts at omega/(1-a-b) when a+b < 1 and at omega otherwise; the
    first `burn_in` values are discarded. Violation of E log(a + b eta^2) < 0
    is flagged on the result and logged, never raised.

    Args:
        spec: Garch11 spec
        n: Number of retained innovations
        stream: Random source
        moment_draws: Draws for the stationarity check

    Returns:
        InnovationDraw with `stationary` and `tail_index`
    """
    if spec.family is not Family.GARCH11:
        raise DomainError(f"sample_garch needs a Garch11 spec, got {spec.family.value}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")

    rng = as_generator(stream)
    total = spec.burn_in + n
    eta = sample_noise(spec, total, rng)

    persistence = spec.a + spec.b
    sigma2 = spec.omega / (1.0 - persistence) if persistence < 1.0 else spec.omega
    eps = np.empty(total)
    omega, a, b = spec.omega, spec.a, spec.b
    for i in range(total):
        if i > 0:
            sigma2 = omega + a * sigma2 + b * eps[i - 1] ** 2
        eps[i] = math.sqrt(sigma2) * eta[i]

    log_moment = garch_log_moment(spec, moment_draws)
    stationary = log_moment < 0
    if not stationary:
        logger.warning(f"GARCH parameters violate E log(a+b eta^2) < 0 "
                       f"(estimate {log_moment:.4f}); output is not stationary")

    return InnovationDraw(
        eps=eps[spec.burn_in:],
        stationary=bool(stationary),
        tail_index=min(kesten_index(spec, moment_draws), noise_tail_index(spec)),
    )


# ============================================================================
# Linear moving average
# ============================================================================

def truncation_for(spec: InnovationSpec, n: int, min_truncation: Optional[int] = None) -> int:
    """M used for a sample of size n: override length, explicit M, or max(n, 1000)."""
    min_truncation = SETTINGS.ma_min_truncation if min_truncation is None else min_truncation
    if spec.coefficients is not None:
        return len(spec.coefficients)
    if spec.truncation is not None:
        return spec.truncation
    return max(int(n), int(min_truncation))


def ma_coefficients(spec: InnovationSpec, truncation: int) -> np.ndarray:
    """c_1..c_M with c_j = j^{-theta} l(j), or the override."""
    if spec.coefficients is not None:
        return np.asarray(spec.coefficients, dtype=float)
    j = np.arange(1, truncation + 1, dtype=float)
    c = j ** (-spec.theta)
    if spec.slowly_varying is SlowlyVarying.LOG:
        c = c * np.log1p(j)
    return c


def slowly_varying_value(spec: InnovationSpec, x: float) -> float:
    return math.log1p(x) if spec.slowly_varying is SlowlyVarying.LOG else 1.0


def truncation_tail_mass(spec: InnovationSpec, truncation: int, direct_terms: int = 10_000) -> float:
    """Coefficient l2 mass sum_{j>M} c_j^2 left out by truncating at M."""
    if spec.coefficients is not None:
        return 0.0
    power = 2.0 * spec.theta
    if spec.slowly_varying is SlowlyVarying.CONSTANT:
        return float(special.zeta(power, truncation + 1))

    j = np.arange(truncation + 1, truncation + direct_terms + 1, dtype=float)
    head = float(np.sum(j ** (-power) * np.log1p(j) ** 2))
    tail, _ = integrate.quad(lambda u: u ** (-power) * math.log1p(u) ** 2,
                             truncation + direct_terms + 0.5, np.inf, limit=200)
    return head + float(tail)


def _causal_filter(eta: np.ndarray, kernel: np.ndarray, direct_max: int) -> np.ndarray:
    if kernel.size - 1 <= direct_max:
        return np.convolve(eta, kernel)
    return signal.fftconvolve(eta, kernel)


def sample_linear_ma(spec: InnovationSpec, n: int, stream: RandomSource,
                     min_truncation: Optional[int] = None,
                     direct_max: Optional[int] = None) -> InnovationDraw:
    """
    Simulate eps_i = sum_{j=1}^{M} c_j eta_{i-j} from n + M base draws.

    The filter runs as a direct convolution for M <= direct_max and through
    the FFT otherwise.

    Args:
        spec: LinearMA spec
        n: Number of innovations
        stream: Random source
        min_truncation: Floor of the default truncation max(n, floor)
        direct_max: Largest M convolved directly

    Returns:
        InnovationDraw carrying the truncation tail mass
    """
    if spec.family is not Family.LINEAR_MA:
        raise DomainError(f"sample_linear_ma needs a LinearMA spec, got {spec.family.value}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")

    direct_max = SETTINGS.direct_convolution_max if direct_max is None else direct_max
    m = truncation_for(spec, n, min_truncation)
    c = ma_coefficients(spec, m)
    eta = sample_noise(spec, n + m, as_generator(stream))

    # eta[k] holds eta_{k-M}; kernel[0] = 0 makes the filter strictly causal
    kernel = np.concatenate(([0.0], c))
    eps = _causal_filter(eta, kernel, direct_max)[m + 1:m + n + 1]

    return InnovationDraw(
        eps=eps,
        truncation_tail_mass=truncation_tail_mass(spec, m),
        tail_index=noise_tail_index(spec),
        truncation=m,
    )


def ma_direct(spec: InnovationSpec, n: int, stream: RandomSource,
              min_truncation: Optional[int] = None) -> np.ndarray:
    """O(nM) double loop over the same base draws as sample_linear_ma."""
    m = truncation_for(spec, n, min_truncation)
    c = ma_coefficients(spec, m)
    eta = sample_noise(spec, n + m, as_generator(stream))
    eps = np.zeros(n)
    for i in range(1, n + 1):
        total = 0.0
        for j in range(1, m + 1):
            total += c[j - 1] * eta[i - j + m]
        eps[i - 1] = total
    return eps


def ma_short_memory_condition(theta: float, alpha: float) -> bool:
    """Coefficient decay sufficient for the root-n marked limit with stable(alpha) noise."""
    threshold = 2.0 / alpha if alpha < 1.0 else 3.0 / alpha
    return theta > threshold


# ============================================================================
# Dispatch and normalization
# ============================================================================

def generate_innovations(spec: InnovationSpec, n: int, stream: RandomSource) -> InnovationDraw:
    """Draw n innovations for any family."""
    if spec.family is Family.STABLE_IID:
        eps = sample_stable_iid(spec.alpha, spec.skew, n, stream)
        return InnovationDraw(eps=eps, tail_index=spec.alpha if spec.alpha < 2.0 else math.inf)
    if spec.family is Family.GARCH11:
        return sample_garch(spec, n, stream)
    return sample_linear_ma(spec, n, stream)


def tail_index(spec: InnovationSpec) -> float:
    """Tail index of the marginal law of eps (inf for light tails)."""
    if spec.family is Family.STABLE_IID:
        return spec.alpha if spec.alpha < 2.0 else math.inf
    if spec.family is Family.GARCH11:
        return min(kesten_index(spec), noise_tail_index(spec))
    return noise_tail_index(spec)


def hill_estimator(sample: np.ndarray, k: int) -> float:
    """Hill estimate of the tail index from the k largest |values|."""
    magnitudes = np.sort(np.abs(np.asarray(sample, dtype=float)))[::-1]
    if not 1 <= k < magnitudes.size:
        raise DomainError(f"k must lie in [1, {magnitudes.size - 1}], got {k}")
    logs = np.log(magnitudes[:k + 1])
    return float(1.0 / np.mean(logs[:k] - logs[k]))


def normalizer_regime(spec: InnovationSpec, tail: Optional[float] = None,
                      tol: Optional[float] = None) -> NormalizerRegime:
    """Pick the closed form of a_n for a spec."""
    tol = SETTINGS.kesten_tol if tol is None else tol
    if spec.is_long_memory:
        return NormalizerRegime.LONG_MEMORY
    kappa = tail_index(spec) if tail is None else tail
    if math.isnan(kappa):
        logger.warning("Tail index undefined (nonstationary GARCH); using root-n normalization")
        return NormalizerRegime.ROOT_N
    if spec.family is Family.GARCH11 and abs(kappa - 2.0) <= tol:
        return NormalizerRegime.BOUNDARY
    if kappa < 2.0:
        return NormalizerRegime.HEAVY_TAIL
    return NormalizerRegime.ROOT_N


def normalizer_a_n(spec: InnovationSpec, n: int, tail: Optional[float] = None) -> float:
    """
    Scaling constant a_n, leading order only (constant factors absorbed).

    n^{1/alpha} for tail index alpha < 2, sqrt(n log n) at a GARCH index of 2,
    sqrt(n) for finite variance short memory and n^{3/2-theta} l(n) for
    long-memory moving averages.

    Args:
        spec: Innovation spec
        n: Sample size
        tail: Tail index override (skips the Kesten computation)
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    regime = normalizer_regime(spec, tail)
    if regime is NormalizerRegime.LONG_MEMORY:
        return float(n ** (1.5 - spec.theta) * slowly_varying_value(spec, n))
    if regime is NormalizerRegime.HEAVY_TAIL:
        kappa = tail_index(spec) if tail is None else tail
        return float(n ** (1.0 / kappa))
    if regime is NormalizerRegime.BOUNDARY:
        return float(math.sqrt(n * max(math.log(n), 1.0)))
    return float(math.sqrt(n))
