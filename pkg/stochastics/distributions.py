"""
Reference Distributions
CDF / density / quantile evaluators used to center the marked empirical process
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import stats
from scipy.interpolate import PchipInterpolator

from stochastics.errors import DomainError
from stochastics.innovations import (
    Family,
    InnovationSpec,
    NoiseLaw,
    generate_innovations,
    ma_coefficients,
    truncation_for,
)
from stochastics.streams import NoiseStream

logger = logging.getLogger(__name__)

STABLE_TABLE_DRAWS = 10_000_000
SIMULATED_TABLE_DRAWS = 1_000_000
TABLE_KNOTS = 2049

TABLE_STREAM = NoiseStream(seed=0x7AB1E, stream_id=0)

REFERENCE_IDS = ("auto", "normal", "student_t", "two_point", "stable")


@dataclass(frozen=True)
class ReferenceDistribution:
    """A reference law F with its density f and quantile function."""
    F_id: str
    cdf_fn: Callable[[np.ndarray], np.ndarray]
    pdf_fn: Callable[[np.ndarray], np.ndarray]
    ppf_fn: Callable[[np.ndarray], np.ndarray]

    def cdf(self, x):
        return self.cdf_fn(np.asarray(x, dtype=float))

    def pdf(self, x):
        return self.pdf_fn(np.asarray(x, dtype=float))

    def ppf(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr <= 0.0) | (q_arr >= 1.0)):
            raise DomainError("quantile level must lie in (0, 1)")
        return self.ppf_fn(q_arr)

    def __call__(self, x):
        return self.cdf(x)


def normal_reference(scale: float = 1.0) -> ReferenceDistribution:
    law = stats.norm(scale=scale)
    F_id = "normal" if scale == 1.0 else f"normal(scale={scale:.17g})"
    return ReferenceDistribution(F_id, law.cdf, law.pdf, law.ppf)


def student_t_reference(df: float, scale: float = 1.0) -> ReferenceDistribution:
    law = stats.t(df, scale=scale)
    F_id = f"student_t(df={df:.17g})" if scale == 1.0 else f"student_t(df={df:.17g},scale={scale:.17g})"
    return ReferenceDistribution(F_id, law.cdf, law.pdf, law.ppf)


def two_point_reference(scale: float = 1.0) -> ReferenceDistribution:
    """Law of +/-scale with probability 1/2 each. Its density is 0 off the atoms."""
    def cdf(x):
        return np.where(x < -scale, 0.0, np.where(x < scale, 0.5, 1.0))

    def pdf(x):
        return np.zeros_like(x, dtype=float)

    def ppf(q):
        return np.where(q <= 0.5, -scale, scale)

    F_id = "two_point" if scale == 1.0 else f"two_point(scale={scale:.17g})"
    return ReferenceDistribution(F_id, cdf, pdf, ppf)


def table_reference(sample: np.ndarray, F_id: str, knots: int = TABLE_KNOTS) -> ReferenceDistribution:
    """
    Monotone (PCHIP) interpolation of the empirical quantiles of a large sample.

    The CDF is 0 below the sample minimum and 1 above the maximum; the density
    is the derivative of the interpolant.
    """
    if knots < 2:
        raise DomainError(f"knots must be >= 2, got {knots}")
    levels = np.linspace(0.0, 1.0, knots)
    points = np.quantile(np.asarray(sample, dtype=float), levels)
    points, first = np.unique(points, return_index=True)
    levels = levels[first]
    if points.size < 2:
        raise DomainError("sample is degenerate; cannot build a CDF table")

    cdf_interp = PchipInterpolator(points, levels, extrapolate=False)
    pdf_interp = cdf_interp.derivative()
    ppf_interp = PchipInterpolator(levels, points, extrapolate=True)
    lo, hi = points[0], points[-1]

    def cdf(x):
        inside = np.clip(x, lo, hi)
        return np.where(x < lo, 0.0, np.where(x > hi, 1.0, np.clip(cdf_interp(inside), 0.0, 1.0)))

    def pdf(x):
        inside = np.clip(x, lo, hi)
        return np.where((x < lo) | (x > hi), 0.0, np.maximum(pdf_interp(inside), 0.0))

    def ppf(q):
        return ppf_interp(q)

    return ReferenceDistribution(F_id, cdf, pdf, ppf)


@lru_cache(maxsize=16)
def stable_reference(alpha: float, skew: float, draws: int = STABLE_TABLE_DRAWS,
                     knots: int = TABLE_KNOTS) -> ReferenceDistribution:
    """CDF table of the standard stable(alpha, skew) law from `draws` simulated values."""
    if alpha == 2.0:
        return normal_reference(math.sqrt(2.0))
    logger.info(f"Building stable CDF table (alpha={alpha}, skew={skew}, draws={draws})...")
    table_spec = InnovationSpec(family=Family.STABLE_IID, alpha=alpha, skew=skew)
    sample = generate_innovations(table_spec, draws, TABLE_STREAM).eps
    return table_reference(sample, f"stable(alpha={alpha:.17g},skew={skew:.17g})", knots)


@lru_cache(maxsize=16)
def simulated_reference(spec: InnovationSpec, draws: int = SIMULATED_TABLE_DRAWS,
                        knots: int = TABLE_KNOTS) -> ReferenceDistribution:
    """CDF table of the marginal law of the spec's own innovations."""
    logger.info(f"Building simulated CDF table for {spec.family.value} (draws={draws})...")
    sample = generate_innovations(spec, draws, TABLE_STREAM).eps
    return table_reference(sample, f"simulated({spec.family.value})", knots)


def _scaled_noise_reference(spec: InnovationSpec, scale: float) -> Optional[ReferenceDistribution]:
    if spec.noise is NoiseLaw.NORMAL:
        return normal_reference(scale)
    if spec.noise is NoiseLaw.STUDENT_T:
        return student_t_reference(spec.df, scale)
    if spec.noise is NoiseLaw.TWO_POINT:
        return two_point_reference(scale)
    return None


def reference_for_spec(spec: InnovationSpec, n: int,
                       stable_draws: int = STABLE_TABLE_DRAWS,
                       simulated_draws: int = SIMULATED_TABLE_DRAWS,
                       knots: int = TABLE_KNOTS) -> ReferenceDistribution:
    """
    Marginal CDF of eps for a spec at sample size n.

    Closed forms where they exist (Gaussian, Student-t, two-point and their
    scalings); otherwise a Monte Carlo table.
    """
    if spec.family is Family.STABLE_IID:
        return stable_reference(spec.alpha, spec.skew, stable_draws, knots)

    if spec.family is Family.GARCH11:
        if spec.a == 0.0 and spec.b == 0.0:
            return _scaled_noise_reference(spec, math.sqrt(spec.omega))
        return simulated_reference(spec, simulated_draws, knots)

    truncation = truncation_for(spec, n)
    c = ma_coefficients(spec, truncation)
    nonzero = c[c != 0.0]
    if spec.noise is NoiseLaw.NORMAL:
        return normal_reference(float(np.sqrt(np.sum(c ** 2))))
    if nonzero.size == 1 and spec.noise is not NoiseLaw.STABLE:
        return _scaled_noise_reference(spec, float(abs(nonzero[0])))
    pinned = spec.model_copy(update={"truncation": truncation}) if spec.coefficients is None else spec
    return simulated_reference(pinned, simulated_draws, knots)


def reference_by_id(F_id: str, spec: InnovationSpec, n: int, **table_options) -> ReferenceDistribution:
    """
    Resolve a reference-CDF tag.

    Args:
        F_id: One of auto, normal, student_t, two_point, stable
        spec: Spec supplying df / alpha / skew and the `auto` choice
        n: Sample size (sets the MA truncation for `auto`)
    """
    if F_id == "auto":
        return reference_for_spec(spec, n, **table_options)
    if F_id == "normal":
        return normal_reference()
    if F_id == "student_t":
        return student_t_reference(spec.df)
    if F_id == "two_point":
        return two_point_reference()
    if F_id == "stable":
        return stable_reference(spec.alpha, spec.skew,
                                table_options.get("stable_draws", STABLE_TABLE_DRAWS),
                                table_options.get("knots", TABLE_KNOTS))
    raise DomainError(f"unknown F_id '{F_id}'; expected one of {', '.join(REFERENCE_IDS)}")
