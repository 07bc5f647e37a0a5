"""
Configuration Management for the Unit-Root Marked Process Toolkit
Handles environment variables and numerical defaults
"""

import os
import sys
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv
import logging

# Fix Windows encoding
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8')

logger = logging.getLogger(__name__)

# Load environment variables from .env file
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(dotenv_path=env_path)


def _env_int(name: str, default: int) -> int:
    return int(float(os.getenv(name, str(default))))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, repr(default)))


class Config:
    """
    Configuration class for runtime settings and numerical defaults.

    Values come from the environment (or a .env file in the project root).
    Worker modules in `stochastics/` carry the same defaults; the CLI and the
    API push the sampler settings into them with configure_samplers.
    """

    # ============================================================================
    # Application Settings
    # ============================================================================

    # Environment (development, production, testing)
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")

    # Debug mode
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    # Logging level and optional log file
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE") or None

    # Data and output directories
    DATA_DIR: str = os.getenv("DATA_DIR", "data")
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "data/runs")

    # ============================================================================
    # Monte Carlo Defaults
    # ============================================================================

    # Base seed when a config does not give one
    DEFAULT_SEED: int = _env_int("DEFAULT_SEED", 20240101)

    # Worker threads for replicate loops
    DEFAULT_THREADS: int = _env_int("DEFAULT_THREADS", 1)

    # Mark grid [-A, A]
    GRID_HALF_WIDTH: float = _env_float("GRID_HALF_WIDTH", 3.0)
    GRID_POINTS: int = _env_int("GRID_POINTS", 241)

    # Time discretization of limit paths
    TIME_STEPS: int = _env_int("TIME_STEPS", 4096)
    PRELIMIT_BLOCK: int = _env_int("PRELIMIT_BLOCK", 4)
    REJECTION_THRESHOLD: float = _env_float("REJECTION_THRESHOLD", 1e-12)

    # ============================================================================
    # Innovation Samplers
    # ============================================================================

    # GARCH Kesten index root finding
    KESTEN_DRAWS: int = _env_int("KESTEN_DRAWS", 1_000_000)
    KESTEN_TOL: float = _env_float("KESTEN_TOL", 1e-3)

    # Moving-average truncation M = max(n, MA_MIN_TRUNCATION)
    MA_MIN_TRUNCATION: int = _env_int("MA_MIN_TRUNCATION", 1000)

    # Direct convolution below this truncation, FFT above
    DIRECT_CONVOLUTION_MAX: int = _env_int("DIRECT_CONVOLUTION_MAX", 64)

    # Monte Carlo CDF tables
    STABLE_TABLE_DRAWS: int = _env_int("STABLE_TABLE_DRAWS", 10_000_000)
    SIMULATED_TABLE_DRAWS: int = _env_int("SIMULATED_TABLE_DRAWS", 1_000_000)
    TABLE_KNOTS: int = _env_int("TABLE_KNOTS", 2049)

    # ============================================================================
    # FastAPI Settings
    # ============================================================================

    # API host and port
    API_HOST: str = os.getenv("API_HOST", "127.0.0.1")
    API_PORT: int = int(os.getenv("API_PORT", "8000"))

    # CORS settings
    CORS_ORIGINS: list = os.getenv("CORS_ORIGINS", "*").split(",")

    @classmethod
    def table_options(cls) -> dict:
        """Keyword arguments for the reference-distribution table builders."""
        return {
            "stable_draws": cls.STABLE_TABLE_DRAWS,
            "simulated_draws": cls.SIMULATED_TABLE_DRAWS,
            "knots": cls.TABLE_KNOTS,
        }

    @classmethod
    def sampler_settings(cls) -> dict:
        """Keyword arguments for stochastics.innovations.configure_samplers."""
        return {
            "kesten_draws": cls.KESTEN_DRAWS,
            "kesten_tol": cls.KESTEN_TOL,
            "ma_min_truncation": cls.MA_MIN_TRUNCATION,
            "direct_convolution_max": cls.DIRECT_CONVOLUTION_MAX,
        }

    @classmethod
    def summary(cls) -> dict:
        """
        Collect the active configuration.

        Returns:
            Dict of setting name to value
        """
        return {
            name: getattr(cls, name)
            for name in dir(cls)
            if name.isupper() and not name.startswith("_")
        }

    @classmethod
    def print_config_summary(cls):
        """Print configuration summary."""
        print("\n" + "="*80)
        print("UNIT-ROOT MARKED PROCESS TOOLKIT - CONFIGURATION")
        print("="*80)
        print(f"\nEnvironment: {cls.ENVIRONMENT}")
        print(f"Debug Mode: {cls.DEBUG}")
        print(f"Log Level: {cls.LOG_LEVEL}")
        print(f"Log File: {cls.LOG_FILE or '-'}")
        print(f"\nData Directory: {cls.DATA_DIR}")
        print(f"Output Directory: {cls.OUTPUT_DIR}")

        print(f"\nMonte Carlo:")
        print(f"  Seed: {cls.DEFAULT_SEED}")
        print(f"  Threads: {cls.DEFAULT_THREADS}")
        print(f"  Mark grid: [-{cls.GRID_HALF_WIDTH}, {cls.GRID_HALF_WIDTH}] x {cls.GRID_POINTS}")
        print(f"  Time steps: {cls.TIME_STEPS} (pre-limit block {cls.PRELIMIT_BLOCK})")

        print(f"\nSamplers:")
        print(f"  Kesten draws / tol: {cls.KESTEN_DRAWS} / {cls.KESTEN_TOL}")
        print(f"  MA min truncation: {cls.MA_MIN_TRUNCATION}")
        print(f"  CDF tables: stable {cls.STABLE_TABLE_DRAWS}, simulated {cls.SIMULATED_TABLE_DRAWS}, "
              f"{cls.TABLE_KNOTS} knots")

        print(f"\nFastAPI Settings:")
        print(f"  Host: {cls.API_HOST}")
        print(f"  Port: {cls.API_PORT}")
        print(f"  CORS Origins: {cls.CORS_ORIGINS}")
        print("="*80 + "\n")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    Config.print_config_summary()
