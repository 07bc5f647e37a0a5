"""
Comparison Reports
Finite-n versus limit-law summaries and their CSV / JSON files
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from stochastics.processes import FLOAT_FORMAT

logger = logging.getLogger(__name__)

REPORT_CSV = "report.csv"
SUMMARY_JSON = "summary.json"


def _json_float(value: Optional[float]) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


@dataclass(frozen=True)
class SampleSizeSummary:
    """Finite-n side of the comparison at one sample size."""
    n: int
    quantiles: Dict[float, float]
    ks: float
    R_effective: int
    dropped: int
    median_max_level: float
    wasserstein: Optional[float] = None


@dataclass
class ComparisonReport:
    """
    Quantiles of a finite-n statistic per n against one shared limit ensemble.

    wall_time is kept in memory and logged; it never reaches the files so
    reruns stay byte-identical.
    """
    config_hash: str
    seed: int
    statistic: str
    limit_kind: str
    levels: Tuple[float, ...]
    rows: List[SampleSizeSummary]
    limit_quantiles: Dict[float, float]
    limit_draws: int
    limit_rejections: int
    limit_source: str
    limit_builds: int = 1
    density_flag: bool = False
    notes: List[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def ks_by_n(self) -> List[Tuple[int, float]]:
        return [(row.n, row.ks) for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        """One row per (n, level)."""
        records = []
        for row in self.rows:
            for level in self.levels:
                records.append({
                    "n": row.n,
                    "level": level,
                    "finite_n_quantile": row.quantiles[level],
                    "limit_quantile": self.limit_quantiles[level],
                    "ks": row.ks,
                    "wasserstein": row.wasserstein if row.wasserstein is not None else math.nan,
                    "R_effective": row.R_effective,
                    "dropped": row.dropped,
                    "median_max_level": row.median_max_level,
                })
        return pd.DataFrame.from_records(records)

    def summary(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "statistic": self.statistic,
            "limit_kind": self.limit_kind,
            "levels": list(self.levels),
            "limit": {
                "draws": self.limit_draws,
                "rejections": self.limit_rejections,
                "source": self.limit_source,
                "builds": self.limit_builds,
                "quantiles": {f"{q:g}": _json_float(v) for q, v in self.limit_quantiles.items()},
            },
            "per_n": [
                {
                    "n": row.n,
                    "ks": _json_float(row.ks),
                    "wasserstein": _json_float(row.wasserstein),
                    "R_effective": row.R_effective,
                    "dropped": row.dropped,
                    "median_max_level": _json_float(row.median_max_level),
                }
                for row in self.rows
            ],
            "density_flag": self.density_flag,
            "notes": list(self.notes),
        }


def write_json(payload: dict, path: Union[str, Path]) -> Path:
    """Sorted-key, indented JSON with a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """CSV with the same shortest round-trip float text as write_json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_report(report: ComparisonReport, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """
    Save report.csv and summary.json under out_dir.

    Returns:
        (csv path, json path)
    """
    out_dir = Path(out_dir)
    csv_path = write_frame(report.to_frame(), out_dir / REPORT_CSV)
    json_path = write_json(report.summary(), out_dir / SUMMARY_JSON)
    logger.info(f"Report saved to {csv_path} and {json_path}")
    return csv_path, json_path
