"""
Experiment Configuration
JSON-backed, validated description of one replication study
"""

import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from backend.config import Config
from stochastics.distributions import REFERENCE_IDS
from stochastics.estimators import EstimatorMethod
from stochastics.innovations import InnovationSpec, NormalizerRegime, normalizer_regime
from stochastics.limit_laws import CovModel, JointMode, LimitKind, LimitParams
from stochastics.marked_process import WEIGHT_IDS, NormKind, SupMode

logger = logging.getLogger(__name__)

REPORT_LEVELS = (0.5, 0.9, 0.95, 0.99)
GOF_LEVELS = (0.90, 0.95, 0.99)
MIN_REPLICATES = 100


class ConfigError(Exception):
    """Raised when an experiment config file cannot be read or validated."""


class Statistic(str, Enum):
    MARKED_SUP = "MarkedSup"
    RESIDUAL_SUP = "ResidualSup"
    QUANTILE_SCALED_ERROR = "QuantileScaledError"
    LSE_SCALED_ERROR = "LSEScaledError"
    LONG_MEMORY_MARKED = "LongMemoryMarked"
    LONG_MEMORY_RECENTERED = "LongMemoryRecentered"


class CriticalSource(str, Enum):
    LIMIT = "limit"
    FINITE_N = "finite_n"


LONG_MEMORY_STATISTICS = (Statistic.LONG_MEMORY_MARKED, Statistic.LONG_MEMORY_RECENTERED)
SUP_STATISTICS = (Statistic.MARKED_SUP, Statistic.RESIDUAL_SUP) + LONG_MEMORY_STATISTICS


class ExperimentConfig(BaseModel):
    """
    One replication study: a model, sample sizes, a statistic and its limit.

    Unknown keys are rejected so typos in study files fail loudly.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    spec: InnovationSpec
    n_list: Tuple[int, ...] = Field(..., min_length=1)
    R: int = Field(200, ge=MIN_REPLICATES, description="Replicates per n and limit draws")
    statistic: Statistic = Statistic.MARKED_SUP

    # Estimator
    estimator: EstimatorMethod = EstimatorMethod.QUANTILE
    tau: float = Field(0.5, gt=0.0, lt=1.0)
    q_tau: Optional[float] = None
    estimate_intercept: bool = False

    # Marked process
    g_id: str = "identity"
    g_scale: float = 1.0
    F_id: str = "auto"
    A: float = Field(Config.GRID_HALF_WIDTH, gt=0.0)
    grid_size: int = Field(Config.GRID_POINTS, ge=1)
    sup_mode: SupMode = SupMode.SIGNED

    # Path
    beta: float = 1.0
    x0: float = 0.0

    # Limit law
    k: int = Field(Config.TIME_STEPS, ge=16)
    cov_model: CovModel = CovModel.PLUGIN_IID
    joint: JointMode = JointMode.AUTO
    block: int = Field(Config.PRELIMIT_BLOCK, ge=1)
    table_draws: Optional[int] = Field(None, ge=1000)

    # Reproducibility and outputs
    base_seed: int = Field(Config.DEFAULT_SEED, ge=0, le=2**64 - 1)
    levels: Tuple[float, ...] = REPORT_LEVELS
    critical_source: CriticalSource = CriticalSource.LIMIT
    export_series: bool = False
    wasserstein: bool = False

    @field_validator("n_list")
    @classmethod
    def _ascending(cls, value):
        if any(n < 1 for n in value):
            raise ValueError("sample sizes must be positive")
        if any(b < a for a, b in zip(value, value[1:])):
            raise ValueError("n_list must be ascending")
        return value

    @field_validator("levels")
    @classmethod
    def _levels_in_unit_interval(cls, value):
        if not value or any(not 0.0 < q < 1.0 for q in value):
            raise ValueError("levels must lie in (0, 1)")
        return tuple(sorted(value))

    @field_validator("g_id")
    @classmethod
    def _known_weight(cls, value):
        if value not in WEIGHT_IDS or value == "custom":
            raise ValueError(f"g_id must be one of {', '.join(w for w in WEIGHT_IDS if w != 'custom')}")
        return value

    @field_validator("F_id")
    @classmethod
    def _known_reference(cls, value):
        if value not in REFERENCE_IDS:
            raise ValueError(f"F_id must be one of {', '.join(REFERENCE_IDS)}")
        return value

    @model_validator(mode="after")
    def _statistic_fits_model(self):
        if self.statistic in LONG_MEMORY_STATISTICS and not self.spec.is_long_memory:
            raise ValueError(f"{self.statistic.value} needs a LinearMA spec with theta < 1")
        if self.statistic is Statistic.QUANTILE_SCALED_ERROR and self.estimator is not EstimatorMethod.QUANTILE:
            raise ValueError("QuantileScaledError needs estimator 'quantile'")
        if self.statistic is Statistic.LSE_SCALED_ERROR and self.estimator is not EstimatorMethod.LSE:
            raise ValueError("LSEScaledError needs estimator 'lse'")
        return self

    @property
    def distinct_n(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.n_list)))

    @property
    def uses_estimator(self) -> bool:
        return self.statistic not in (Statistic.MARKED_SUP, Statistic.LONG_MEMORY_MARKED)

    @property
    def is_sup_statistic(self) -> bool:
        return self.statistic in SUP_STATISTICS

    @property
    def limit_kind(self) -> LimitKind:
        if self.statistic is Statistic.MARKED_SUP:
            return LimitKind.MARKED_SUP
        if self.statistic is Statistic.RESIDUAL_SUP:
            if self.estimator is EstimatorMethod.QUANTILE:
                return LimitKind.RESIDUAL_QUANTILE_SUP
            return LimitKind.RESIDUAL_LSE_SUP
        if self.statistic is Statistic.QUANTILE_SCALED_ERROR:
            return LimitKind.QUANTILE_ERROR
        if self.statistic is Statistic.LSE_SCALED_ERROR:
            return LimitKind.LSE_ERROR
        return LimitKind.LONG_MEMORY_SUP

    @property
    def residual_norm(self) -> NormKind:
        """sqrt(n) for the quantile estimator and the root-n LSE regime, a_n otherwise."""
        if self.estimator is EstimatorMethod.QUANTILE:
            return NormKind.SQRT_N
        if normalizer_regime(self.spec) is NormalizerRegime.ROOT_N:
            return NormKind.SQRT_N
        return NormKind.A_N

    def limit_params(self) -> LimitParams:
        """Limit-law parameters; constants are fixed at the largest n."""
        return LimitParams(
            spec=self.spec,
            g_id=self.g_id,
            g_scale=self.g_scale,
            F_id=self.F_id,
            A=self.A,
            grid_size=self.grid_size,
            k=self.k,
            cov_model=self.cov_model,
            joint=self.joint,
            block=self.block,
            tau=self.tau,
            q_tau=self.q_tau,
            sup_mode=self.sup_mode,
            n_ref=max(self.n_list),
            rejection_threshold=Config.REJECTION_THRESHOLD,
            table_draws=self.table_draws,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form of the config."""
    return hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest()


def _field_messages(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "; ".join(lines)


def parse_experiment_config(data: dict) -> ExperimentConfig:
    """
    Validate a config mapping.

    Raises:
        ConfigError: With one `field: message` entry per problem
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_field_messages(e)}") from e


def load_experiment_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """
    Read and validate a JSON config file.

    Args:
        path: Config file
        seed: Overrides base_seed when given

    Raises:
        ConfigError: If the file is not valid JSON or fails validation
        OSError: If the file cannot be read
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    if seed is not None:
        data["base_seed"] = seed
    config = parse_experiment_config(data)
    logger.debug(f"Loaded config {path} (hash {config_hash(config)[:12]})")
    return config
