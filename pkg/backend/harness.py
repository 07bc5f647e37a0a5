"""
Monte Carlo Harness
Runs replication studies: finite-n statistics, the shared limit ensemble and their comparison
"""

import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from backend.config import Config
from backend.experiment import (
    GOF_LEVELS,
    ConfigError,
    CriticalSource,
    ExperimentConfig,
    Statistic,
    config_hash,
)
from backend.reports import ComparisonReport, SampleSizeSummary
from stochastics.distributions import ReferenceDistribution, reference_by_id
from stochastics.errors import DomainError, UnidentifiedError
from stochastics.estimators import estimate
from stochastics.innovations import (
    Family,
    NoiseLaw,
    ma_short_memory_condition,
    normalizer_a_n,
)
from stochastics.limit_laws import LimitEnsemble, LimitKind, limit_sup_statistic
from stochastics.marked_process import (
    NormKind,
    mark_grid,
    marked_empirical,
    recentered_residual_statistic,
    residual_marked_empirical,
    sup_functional,
    weight_function,
)
from stochastics.processes import SeriesSample, export_series_csv, max_normalized_level, simulate_series
from stochastics.streams import NoiseStream

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-8
QUANTILE_LIMIT_KINDS = (LimitKind.QUANTILE_ERROR, LimitKind.RESIDUAL_QUANTILE_SUP)


def empirical_quantile(samples: Sequence[float], q: float) -> float:
    """
    k-th order statistic with k = ceil(q R).

    q R is rounded to 9 decimals first so that e.g. 0.95 * 100 gives k = 95.
    """
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise DomainError("empirical quantile of an empty sample")
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    k = max(1, math.ceil(round(q * values.size, 9)))
    return float(np.partition(values, k - 1)[k - 1])


def two_sample_ks(a: Sequence[float], b: Sequence[float]) -> float:
    """sup over pooled points of |ECDF_a - ECDF_b|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DomainError("KS distance needs two nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)


def ordered_map(func: Callable[[int], object], count: int, threads: int) -> list:
    """func(0..count-1) in index order, on a thread pool when threads > 1."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, range(count)))
    return [func(i) for i in range(count)]


@dataclass(frozen=True)
class FiniteNSample:
    """R replicates of the statistic at one n; dropped replicates had an unidentified estimator."""
    n: int
    values: np.ndarray
    dropped: int
    max_levels: np.ndarray
    stream_offset: int

    @property
    def R_effective(self) -> int:
        return int(self.values.size)


class ExperimentHarness:
    """
    Orchestrates one replication study.

    Pipeline:
    1. Finite-n replicates for every distinct n (stream_id = m R + r)
    2. One limit ensemble (stream_id = |n_list| R + r)
    3. Quantiles, KS distances and the report
    """

    def __init__(self, config: ExperimentConfig, threads: int = Config.DEFAULT_THREADS,
                 out_dir: Optional[Union[str, Path]] = None):
        """
        Initialize the harness.

        Args:
            config: Validated experiment config
            threads: Worker threads for replicates and limit draws
            out_dir: Where replicate series go when config.export_series is set
        """
        self.config = config
        self.threads = max(1, int(threads))
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.g = weight_function(config.g_id, config.g_scale)
        self.x_grid = mark_grid(config.A, config.grid_size)
        self.notes: List[str] = []
        self.limit_builds = 0
        self._references: Dict[int, ReferenceDistribution] = {}
        self._limit: Optional[LimitEnsemble] = None
        self._samples: Dict[int, FiniteNSample] = {}

        self._log_model_conditions()
        self.density_flag = self._density_is_degenerate()

    # ========================================================================
    # Setup
    # ========================================================================

    def _table_options(self) -> dict:
        options = Config.table_options()
        if self.config.table_draws is not None:
            options.update(stable_draws=self.config.table_draws, simulated_draws=self.config.table_draws)
        return options

    def reference_for(self, n: int) -> ReferenceDistribution:
        """Reference law of eps at sample size n (the MA truncation depends on n)."""
        if n not in self._references:
            self._references[n] = reference_by_id(self.config.F_id, self.config.spec, n, **self._table_options())
        return self._references[n]

    @property
    def limit_reference(self) -> ReferenceDistribution:
        return self.reference_for(max(self.config.n_list))

    def _log_model_conditions(self):
        spec = self.config.spec
        if spec.family is Family.LINEAR_MA and spec.noise is NoiseLaw.STABLE and spec.coefficients is None:
            holds = ma_short_memory_condition(spec.theta, spec.alpha)
            if not holds:
                message = (f"theta={spec.theta} does not satisfy the short-memory condition "
                           f"for stable noise with alpha={spec.alpha}")
                logger.warning(message)
                self.notes.append(message)
        if self.config.statistic is Statistic.LONG_MEMORY_MARKED and self.config.g_id != "constant":
            rate = max(self.config.n_list) ** (spec.theta - 1.0)
            message = (f"g_id={self.config.g_id}: the martingale term of order n^(theta-1) = {rate:.3f} "
                       f"is not negligible next to the limit sup; g_id=constant converges fastest")
            logger.warning(message)
            self.notes.append(message)

    def _density_is_degenerate(self) -> bool:
        if self.config.limit_kind not in QUANTILE_LIMIT_KINDS:
            return False
        F = self.limit_reference
        q = self.config.q_tau if self.config.q_tau is not None else float(F.ppf(self.config.tau))
        density = float(F.pdf(q))
        if density < DENSITY_FLOOR:
            message = (f"density of {F.F_id} at the {self.config.tau}-quantile is {density:.3e}; "
                       f"limit quantiles and KS are undefined")
            logger.warning(message)
            self.notes.append(message)
            return True
        return False

    # ========================================================================
    # Finite-n side
    # ========================================================================

    def q_tau_for(self, F: ReferenceDistribution) -> Optional[float]:
        if self.config.q_tau is not None:
            return float(self.config.q_tau)
        if self.config.estimate_intercept:
            return None
        return float(F.ppf(self.config.tau))

    def statistic_value(self, series: SeriesSample, F: ReferenceDistribution) -> float:
        """
        The configured statistic on one path.

        Raises:
            UnidentifiedError: If the estimator has no usable regressor
        """
        config = self.config
        statistic = config.statistic

        if statistic is Statistic.MARKED_SUP:
            return sup_functional(marked_empirical(series, self.g, F, self.x_grid, NormKind.SQRT_N), config.sup_mode)
        if statistic is Statistic.LONG_MEMORY_MARKED:
            return sup_functional(marked_empirical(series, self.g, F, self.x_grid, NormKind.A_N), config.sup_mode)

        result = estimate(series, config.estimator, config.tau, self.q_tau_for(F), config.estimate_intercept)
        if statistic in (Statistic.QUANTILE_SCALED_ERROR, Statistic.LSE_SCALED_ERROR):
            return result.scaled_error
        if statistic is Statistic.RESIDUAL_SUP:
            curve = residual_marked_empirical(series, result.beta_hat, self.g, F, self.x_grid, config.residual_norm)
            return sup_functional(curve, config.sup_mode)
        curve = recentered_residual_statistic(series, result.beta_hat, self.g, F, self.x_grid)
        return sup_functional(curve, config.sup_mode)

    def finite_n_statistics(self, n: int, stream_offset: int) -> FiniteNSample:
        """R replicates at sample size n; replicate r uses stream_id = stream_offset + r."""
        config = self.config
        F = self.reference_for(n)

        def one(r: int):
            stream = NoiseStream(config.base_seed, stream_offset + r)
            series = simulate_series(config.spec, n, stream, beta=config.beta, x0=config.x0)
            if config.export_series and self.out_dir is not None:
                export_series_csv(series, self.out_dir / "series" / f"n{n}_r{r}.csv")
            level = max_normalized_level(series)
            try:
                return self.statistic_value(series, F), level
            except UnidentifiedError as e:
                logger.debug(f"Replicate {r} at n={n} dropped: {e}")
                return None, level

        results = ordered_map(one, config.R, self.threads)
        values = np.array([value for value, _ in results if value is not None], dtype=float)
        dropped = sum(1 for value, _ in results if value is None)
        if dropped:
            logger.warning(f"{dropped} of {config.R} replicates at n={n} dropped (estimator unidentified)")
        return FiniteNSample(
            n=n,
            values=values,
            dropped=dropped,
            max_levels=np.array([level for _, level in results], dtype=float),
            stream_offset=stream_offset,
        )

    def finite_n_samples(self) -> Dict[int, FiniteNSample]:
        """Samples for every distinct n, index m in stream_id = m R + r."""
        for m, n in enumerate(self.config.distinct_n):
            if n not in self._samples:
                self._samples[n] = self.finite_n_statistics(n, m * self.config.R)
        return self._samples

    # ========================================================================
    # Limit side
    # ========================================================================

    @property
    def limit_stream(self) -> NoiseStream:
        return NoiseStream(self.config.base_seed, len(self.config.n_list) * self.config.R)

    def limit_ensemble(self) -> Optional[LimitEnsemble]:
        """The shared ensemble, built once; None when the density at the quantile vanishes."""
        if self.density_flag:
            return None
        if self._limit is None:
            self._limit = limit_sup_statistic(
                self.config.limit_kind,
                self.config.limit_params(),
                self.config.R,
                self.limit_stream,
                threads=self.threads,
                reference=self.limit_reference,
            )
            self.limit_builds += 1
        return self._limit

    # ========================================================================
    # Report
    # ========================================================================

    def _summarize(self, sample: FiniteNSample, limit: Optional[LimitEnsemble]) -> SampleSizeSummary:
        levels = self.config.levels
        if sample.R_effective == 0:
            quantiles = {q: math.nan for q in levels}
        else:
            quantiles = {q: empirical_quantile(sample.values, q) for q in levels}
        ks = math.nan
        distance = None
        if limit is not None and sample.R_effective > 0:
            ks = two_sample_ks(sample.values, limit.draws)
            if self.config.wasserstein:
                distance = float(stats.wasserstein_distance(sample.values, limit.draws))
        return SampleSizeSummary(
            n=sample.n,
            quantiles=quantiles,
            ks=ks,
            R_effective=sample.R_effective,
            dropped=sample.dropped,
            median_max_level=float(np.median(sample.max_levels)),
            wasserstein=distance,
        )

    def run(self) -> ComparisonReport:
        """
        Run the study and assemble the report.

        Returns:
            ComparisonReport with rows in n_list order (duplicates repeat their row)
        """
        config = self.config
        start = time.time()
        logger.info("=" * 80)
        logger.info(f"Experiment {config.statistic.value} on {config.spec.family.value}, "
                    f"n_list={list(config.n_list)}, R={config.R}")
        logger.info("=" * 80)

        logger.info(f"[1/3] Finite-n replicates...")
        step_start = time.time()
        samples = self.finite_n_samples()
        logger.info(f"✓ {len(samples)} sample sizes simulated ({time.time() - step_start:.2f}s)")

        logger.info(f"[2/3] Limit ensemble ({config.limit_kind.value})...")
        step_start = time.time()
        limit = self.limit_ensemble()
        if limit is None:
            logger.info("✓ Limit ensemble skipped (degenerate density)")
        else:
            logger.info(f"✓ {limit.replications} limit draws, {limit.rejections} rejected "
                        f"({time.time() - step_start:.2f}s)")

        logger.info(f"[3/3] Comparing distributions...")
        step_start = time.time()
        summaries = {n: self._summarize(sample, limit) for n, sample in samples.items()}
        if limit is None:
            limit_quantiles = {q: math.nan for q in config.levels}
        else:
            limit_quantiles = {q: empirical_quantile(limit.draws, q) for q in config.levels}

        report = ComparisonReport(
            config_hash=config_hash(config),
            seed=config.base_seed,
            statistic=config.statistic.value,
            limit_kind=config.limit_kind.value,
            levels=tuple(config.levels),
            rows=[summaries[n] for n in config.n_list],
            limit_quantiles=limit_quantiles,
            limit_draws=0 if limit is None else limit.replications,
            limit_rejections=0 if limit is None else limit.rejections,
            limit_source="none" if limit is None else limit.source,
            limit_builds=self.limit_builds,
            density_flag=self.density_flag,
            notes=list(self.notes),
        )
        logger.info(f"✓ Report assembled ({time.time() - step_start:.2f}s)")

        report.wall_time = time.time() - start
        logger.info(f"Experiment finished in {report.wall_time:.2f}s")
        return report


# ============================================================================
# Module-level entry points
# ============================================================================

def run_experiment(config: ExperimentConfig, threads: int = Config.DEFAULT_THREADS,
                   out_dir: Optional[Union[str, Path]] = None) -> ComparisonReport:
    return ExperimentHarness(config, threads, out_dir).run()


def finite_n_statistics(config: ExperimentConfig, n: int, stream_offset: int,
                        threads: int = Config.DEFAULT_THREADS) -> FiniteNSample:
    return ExperimentHarness(config, threads).finite_n_statistics(n, stream_offset)


def limit_ensemble_for(config: ExperimentConfig, threads: int = Config.DEFAULT_THREADS) -> Optional[LimitEnsemble]:
    return ExperimentHarness(config, threads).limit_ensemble()


@dataclass(frozen=True)
class ConvergenceTable:
    """KS distance per n and whether it falls over the last two steps."""
    frame: pd.DataFrame
    monotone: bool
    report: ComparisonReport


def convergence_study(config: ExperimentConfig, threads: int = Config.DEFAULT_THREADS) -> ConvergenceTable:
    """
    KS distance between the finite-n statistic and its limit for each n.

    Raises:
        ConfigError: If n_list has fewer than three entries
    """
    if len(config.n_list) < 3:
        raise ConfigError("convergence study needs at least three sample sizes")
    report = run_experiment(config, threads)
    frame = pd.DataFrame({
        "n": [row.n for row in report.rows],
        "ks": [row.ks for row in report.rows],
        "R_effective": [row.R_effective for row in report.rows],
    })
    if config.wasserstein:
        frame["wasserstein"] = [row.wasserstein for row in report.rows]

    distinct = frame.drop_duplicates("n")["ks"].to_numpy()
    monotone = bool(distinct.size >= 3 and distinct[-3] > distinct[-2] > distinct[-1])
    logger.info(f"Convergence: KS {['%.4f' % v for v in distinct]} (monotone tail: {monotone})")
    return ConvergenceTable(frame=frame, monotone=monotone, report=report)


# ============================================================================
# Goodness-of-fit
# ============================================================================

def _with_model(series: SeriesSample, config: ExperimentConfig) -> SeriesSample:
    if series.spec is not None:
        return series
    return dataclasses.replace(
        series,
        x=np.array(series.x),
        eps=np.array(series.eps),
        spec=config.spec,
        a_n=normalizer_a_n(config.spec, series.n),
    )


def _critical_draws(harness: ExperimentHarness, n: int):
    """Null draws for critical values at sample size n, plus where they came from."""
    config = harness.config
    if config.critical_source is CriticalSource.FINITE_N:
        offset = (len(config.n_list) + 1) * config.R
        return harness.finite_n_statistics(n, offset).values, {"critical_source": "finite_n",
                                                              "stream_offset": offset}
    ensemble = harness.limit_ensemble()
    if ensemble is None:
        raise DomainError("limit law undefined: density at the quantile is zero")
    return ensemble.draws, {"critical_source": "limit", "stream_offset": ensemble.stream_offset,
                            "limit_rejections": ensemble.rejections}


def gof_decision(config: ExperimentConfig, series: SeriesSample, threads: int = Config.DEFAULT_THREADS,
                 levels: Sequence[float] = GOF_LEVELS) -> dict:
    """
    Residual (or recentered long-memory) sup test of the model in `config`.

    Critical values are upper quantiles of the limit ensemble, or of
    finite-n null replicates at the observed n when critical_source is
    finite_n. The null is rejected at level q when the statistic exceeds
    its q-quantile.

    Raises:
        ConfigError: If the configured statistic is not a sup statistic
    """
    if not config.is_sup_statistic:
        raise ConfigError(f"gof-test needs a sup statistic, got {config.statistic.value}")
    harness = ExperimentHarness(config, threads)
    series = _with_model(series, config)
    value = harness.statistic_value(series, harness.reference_for(series.n))

    null_draws, source_meta = _critical_draws(harness, series.n)
    critical = {q: empirical_quantile(null_draws, q) for q in sorted(levels)}
    decisions = [
        {"level": q, "critical_value": c, "reject": bool(value > c)}
        for q, c in critical.items()
    ]
    logger.info(f"GoF statistic {value:.6g}; rejects at "
                f"{[d['level'] for d in decisions if d['reject']] or 'no level'}")
    return {
        "config_hash": config_hash(config),
        "seed": config.base_seed,
        "statistic": config.statistic.value,
        "n": series.n,
        "value": value,
        "null_draws": int(np.asarray(null_draws).size),
        "decisions": decisions,
        **source_meta,
    }


def gof_size(config: ExperimentConfig, n: Optional[int] = None, threads: int = Config.DEFAULT_THREADS,
             levels: Sequence[float] = GOF_LEVELS) -> dict:
    """
    Empirical size of gof_decision: the share of R null paths at sample
    size n (default max(n_list)) rejected at each level.

    The null paths use stream_id = (|n_list| + 2) R + r, disjoint from the
    study, the limit ensemble and the finite-n critical values.
    """
    if not config.is_sup_statistic:
        raise ConfigError(f"gof size needs a sup statistic, got {config.statistic.value}")
    n = int(n) if n is not None else max(config.n_list)
    harness = ExperimentHarness(config, threads)
    null_draws, source_meta = _critical_draws(harness, n)
    offset = (len(config.n_list) + 2) * config.R
    values = harness.finite_n_statistics(n, offset).values
    rates = {}
    for q in sorted(levels):
        critical = empirical_quantile(null_draws, q)
        rates[q] = float(np.mean(values > critical)) if values.size else math.nan
    logger.info(f"GoF size at n={n} over {values.size} null paths: {rates}")
    return {
        "config_hash": config_hash(config),
        "seed": config.base_seed,
        "statistic": config.statistic.value,
        "n": n,
        "replicates": int(values.size),
        "replicate_offset": offset,
        "rejection_rates": rates,
        **source_meta,
    }
