"""
Unit-Root Processes
AR(1) paths X_i = beta X_{i-1} + eps_i, normalized partial sums and series CSV exchange
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from stochastics.errors import DomainError
from stochastics.innovations import Family, InnovationSpec, generate_innovations, normalizer_a_n
from stochastics.streams import NoiseStream, RandomSource

logger = logging.getLogger(__name__)

def format_float(value) -> str:
    """Shortest decimal string that reads back to the same double, as json writes floats."""
    return repr(float(value))


# pandas applies a callable float_format to every non-missing float
FLOAT_FORMAT = format_float


@dataclass(frozen=True)
class SeriesSample:
    """
    One realized path.

    Attributes:
        x: Observations X_0..X_n
        eps: Innovations eps_1..eps_n
        beta_true: Generating beta
        a_n: Normalization constant
        spec: Innovation spec (None for imported observations without metadata)
        seed: Base seed of the generating stream
        stream_id: Replicate index of the generating stream
        truncation_tail_mass: Neglected coefficient l2 mass (moving averages)
    """
    x: np.ndarray
    eps: np.ndarray
    beta_true: float
    a_n: float
    spec: Optional[InnovationSpec] = None
    seed: Optional[int] = None
    stream_id: Optional[int] = None
    truncation_tail_mass: float = 0.0

    def __post_init__(self):
        if self.x.ndim != 1 or self.eps.ndim != 1:
            raise DomainError("x and eps must be one-dimensional")
        if self.x.size != self.eps.size + 1:
            raise DomainError(f"length(x) must equal length(eps) + 1, got {self.x.size} and {self.eps.size}")
        if not self.a_n > 0:
            raise DomainError(f"a_n must be positive, got {self.a_n}")
        self.x.setflags(write=False)
        self.eps.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.eps.size)

    @property
    def x0(self) -> float:
        return float(self.x[0])

    @property
    def lagged(self) -> np.ndarray:
        """X_0..X_{n-1}."""
        return self.x[:-1]

    @property
    def current(self) -> np.ndarray:
        """X_1..X_n."""
        return self.x[1:]


def build_series(eps, beta: float, x0: float = 0.0, *,
                 spec: Optional[InnovationSpec] = None,
                 a_n: Optional[float] = None,
                 seed: Optional[int] = None,
                 stream_id: Optional[int] = None,
                 truncation_tail_mass: float = 0.0,
                 tail: Optional[float] = None) -> SeriesSample:
    """
    Run the AR(1) recursion over a vector of innovations.

    For beta = 1 the path is an accumulated sum starting at x0, so
    X_i = X_{i-1} + eps_i holds bitwise.

    Args:
        eps: Innovations eps_1..eps_n
        beta: Autoregressive coefficient
        x0: Starting value X_0
        spec: Spec used for the default a_n and provenance
        a_n: Explicit normalization (default normalizer_a_n(spec, n), or sqrt(n) without a spec)
        seed: Provenance seed
        stream_id: Provenance stream
        truncation_tail_mass: Neglected MA mass
        tail: Tail index forwarded to the normalizer

    Returns:
        SeriesSample
    """
    eps = np.array(eps, dtype=float)
    if eps.ndim != 1 or eps.size == 0:
        raise DomainError("eps must be a nonempty vector")

    n = eps.size
    if beta == 1.0:
        x = np.add.accumulate(np.concatenate(([float(x0)], eps)))
    else:
        x = np.empty(n + 1)
        x[0] = x0
        for i in range(1, n + 1):
            x[i] = beta * x[i - 1] + eps[i - 1]

    if a_n is None:
        a_n = normalizer_a_n(spec, n, tail) if spec is not None else math.sqrt(n)

    return SeriesSample(
        x=x,
        eps=eps,
        beta_true=float(beta),
        a_n=float(a_n),
        spec=spec,
        seed=seed,
        stream_id=stream_id,
        truncation_tail_mass=float(truncation_tail_mass),
    )


def simulate_series(spec: InnovationSpec, n: int, stream: RandomSource,
                    beta: float = 1.0, x0: float = 0.0) -> SeriesSample:
    """Draw innovations for `spec` and build the path in one call."""
    draw = generate_innovations(spec, n, stream)
    seed = stream.seed if isinstance(stream, NoiseStream) else None
    stream_id = stream.stream_id if isinstance(stream, NoiseStream) else None
    return build_series(
        draw.eps, beta, x0,
        spec=spec,
        seed=seed,
        stream_id=stream_id,
        truncation_tail_mass=draw.truncation_tail_mass,
        tail=draw.tail_index if spec.family is Family.GARCH11 else None,
    )


def observed_series(x, beta: float = 1.0, a_n: Optional[float] = None,
                    spec: Optional[InnovationSpec] = None) -> SeriesSample:
    """
    Wrap raw observations X_0..X_n.

    The innovations are the ones implied by `beta`, eps_i = X_i - beta X_{i-1}.
    """
    x = np.array(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("need at least two observations")
    eps = x[1:] - beta * x[:-1]
    n = eps.size
    if a_n is None:
        a_n = normalizer_a_n(spec, n) if spec is not None else math.sqrt(n)
    return SeriesSample(x=x, eps=eps, beta_true=float(beta), a_n=float(a_n), spec=spec)


@dataclass(frozen=True)
class StepPath:
    """t -> S_n(t)/a_n, right-continuous with jumps at t = i/n."""
    n: int
    cumulative: np.ndarray
    a_n: float
    k_points: int

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any((t_arr < 0.0) | (t_arr > 1.0)) or np.any(np.isnan(t_arr)):
            raise DomainError("t must lie in [0, 1]")
        index = np.floor(np.round(t_arr * self.n, 9)).astype(int)
        values = self.cumulative[index] / self.a_n
        return float(values) if values.ndim == 0 else values

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.k_points + 1) / self.k_points

    def on_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """(t_j, S_n(t_j)/a_n) at t_j = j/k_points."""
        times = self.times
        return times, self(times)


def partial_sum_path(series: SeriesSample, k_points: int) -> StepPath:
    """
    Normalized partial-sum step function S_n(t)/a_n.

    Raises:
        DomainError: If k_points < 1
    """
    if k_points < 1:
        raise DomainError(f"k_points must be >= 1, got {k_points}")
    cumulative = np.add.accumulate(np.concatenate(([0.0], series.eps)))
    return StepPath(n=series.n, cumulative=cumulative, a_n=series.a_n, k_points=int(k_points))


def max_normalized_level(series: SeriesSample) -> float:
    """max_i |X_i| / a_n."""
    return float(np.max(np.abs(series.x)) / series.a_n)


# ============================================================================
# CSV exchange
# ============================================================================

def _sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def export_series_csv(series: SeriesSample, path: Union[str, Path]) -> Path:
    """
    Write columns i, X_i, eps_i (eps_0 left empty) plus a JSON sidecar.

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "i": np.arange(series.n + 1),
        "X_i": series.x,
        "eps_i": np.concatenate(([np.nan], series.eps)),
    })
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)

    sidecar = {
        "n": series.n,
        "beta_true": series.beta_true,
        "a_n": series.a_n,
        "seed": series.seed,
        "stream_id": series.stream_id,
        "truncation_tail_mass": series.truncation_tail_mass,
        "spec": series.spec.model_dump(mode="json") if series.spec is not None else None,
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")

    logger.debug(f"Series written to {path}")
    return path


def import_series_csv(path: Union[str, Path], beta: float = 1.0,
                      spec: Optional[InnovationSpec] = None) -> SeriesSample:
    """
    Read a series written by export_series_csv (or any CSV with an X_i column).

    Metadata comes from the sidecar when present; otherwise `beta` and `spec`
    are used and missing innovations are implied from the observations.

    Raises:
        DomainError: If the file lacks the X_i column or has fewer than two rows
    """
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip")
    if "X_i" not in frame.columns:
        raise DomainError(f"{path} has no X_i column")
    x = frame["X_i"].to_numpy(dtype=float)
    if x.size < 2 or not np.all(np.isfinite(x)):
        raise DomainError(f"{path} needs at least two finite observations")

    sidecar_file = _sidecar_path(path)
    meta = {}
    if sidecar_file.exists():
        with open(sidecar_file) as f:
            meta = json.load(f)
        if meta.get("spec") is not None and spec is None:
            spec = InnovationSpec.model_validate(meta["spec"])
        beta = float(meta.get("beta_true", beta))

    eps = frame["eps_i"].to_numpy(dtype=float)[1:] if "eps_i" in frame.columns else None
    if eps is None or not np.all(np.isfinite(eps)):
        series = observed_series(x, beta=beta, a_n=meta.get("a_n"), spec=spec)
    else:
        a_n = meta.get("a_n")
        if a_n is None:
            a_n = normalizer_a_n(spec, eps.size) if spec is not None else math.sqrt(eps.size)
        series = SeriesSample(
            x=x,
            eps=eps,
            beta_true=beta,
            a_n=float(a_n),
            spec=spec,
            seed=meta.get("seed"),
            stream_id=meta.get("stream_id"),
            truncation_tail_mass=float(meta.get("truncation_tail_mass", 0.0)),
        )

    logger.debug(f"Series read from {path} (n={series.n})")
    return series
