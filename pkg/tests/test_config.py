"""
Unit Tests for Runtime Configuration
Tests Config defaults and the sampler settings hand-off
"""

import pytest

from backend.config import Config
from stochastics import innovations
from stochastics.errors import DomainError


@pytest.fixture
def restore_samplers():
    """Put the shared sampler settings back after a test."""
    saved = dict(vars(innovations.SETTINGS))
    yield innovations.SETTINGS
    innovations.configure_samplers(**saved)


class TestConfig:
    """Test the Config class."""

    def test_table_options(self):
        """Test the keyword names the table builders accept."""
        assert set(Config.table_options()) == {"stable_draws", "simulated_draws", "knots"}

    def test_summary_lists_settings(self):
        """Test that summary collects the upper-case attributes."""
        summary = Config.summary()
        for name in ("DEFAULT_SEED", "GRID_POINTS", "TIME_STEPS", "KESTEN_DRAWS", "API_PORT"):
            assert name in summary
        assert summary["GRID_POINTS"] == Config.GRID_POINTS


class TestSamplerSettings:
    """Test configure_samplers."""

    def test_config_keys_are_accepted(self, restore_samplers):
        """Test that every Config sampler setting lands in SETTINGS."""
        settings = innovations.configure_samplers(**Config.sampler_settings())
        assert settings.kesten_draws == Config.KESTEN_DRAWS
        assert settings.ma_min_truncation == Config.MA_MIN_TRUNCATION
        assert settings.direct_convolution_max == Config.DIRECT_CONVOLUTION_MAX

    def test_values_are_cast(self, restore_samplers):
        """Test that overrides take the field's type."""
        settings = innovations.configure_samplers(ma_min_truncation=250.0)
        assert settings.ma_min_truncation == 250
        assert isinstance(settings.ma_min_truncation, int)

    def test_truncation_follows_settings(self, restore_samplers, long_memory_spec):
        """Test that the MA truncation floor is read at call time."""
        innovations.configure_samplers(ma_min_truncation=500)
        assert innovations.truncation_for(long_memory_spec, 100) == 500

    def test_unknown_setting(self, restore_samplers):
        """Test that a misspelt name is rejected."""
        with pytest.raises(DomainError):
            innovations.configure_samplers(kesten_draw=10)
