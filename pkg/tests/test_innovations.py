"""
Unit Tests for Innovation Samplers
Tests streams, stable / GARCH / moving-average samplers and normalizers
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from stochastics.errors import DomainError
from stochastics.innovations import (
    InnovationSpec,
    NormalizerRegime,
    generate_innovations,
    hill_estimator,
    kesten_index,
    ma_coefficients,
    ma_direct,
    ma_short_memory_condition,
    normalizer_a_n,
    normalizer_regime,
    sample_garch,
    sample_linear_ma,
    sample_stable_iid,
    tail_index,
    truncation_tail_mass,
)
from stochastics.limit_laws import long_memory_scale
from stochastics.streams import NoiseStream


class TestNoiseStream:
    """Test counter-based stream addressing."""

    def test_same_address_same_draws(self):
        """Test that a stream address always reproduces its draws."""
        a = NoiseStream(42, 3).generator().standard_normal(10)
        b = NoiseStream(42, 3).generator().standard_normal(10)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        """Test that neighbouring stream ids and child lanes give different draws."""
        base = NoiseStream(42, 3)
        draws = [s.generator().standard_normal(5) for s in (base, base.replicate(1), base.child(0))]
        assert not np.array_equal(draws[0], draws[1])
        assert not np.array_equal(draws[0], draws[2])

    def test_child_lanes_uncorrelated(self):
        """Test that sibling lanes and the parent stream are uncorrelated."""
        base = NoiseStream(42, 3)
        parent = base.generator().standard_normal(100_000)
        lanes = [base.child(lane).generator().standard_normal(100_000) for lane in (0, 1)]
        assert abs(np.corrcoef(lanes[0], lanes[1])[0, 1]) < 0.02
        assert abs(np.corrcoef(parent, lanes[0])[0, 1]) < 0.02

    def test_replicate_offsets_stream_id(self):
        """Test replicate arithmetic."""
        assert NoiseStream(1, 10).replicate(5).stream_id == 15

    def test_invalid_seed(self):
        """Test that seeds outside 64 bits are rejected."""
        with pytest.raises(DomainError):
            NoiseStream(2**64)
        with pytest.raises(DomainError):
            NoiseStream(1, -1)


class TestInnovationSpec:
    """Test spec validation."""

    def test_unknown_family(self):
        """Test that an unknown family names the field."""
        with pytest.raises(ValidationError) as excinfo:
            InnovationSpec(family="Bogus")
        assert "family" in str(excinfo.value)

    def test_garch_needs_positive_omega(self):
        """Test GARCH intercept validation."""
        with pytest.raises(ValidationError):
            InnovationSpec(family="Garch11", omega=0.0)

    def test_ma_theta_bound(self):
        """Test that theta <= 1/2 is rejected for moving averages."""
        with pytest.raises(ValidationError):
            InnovationSpec(family="LinearMA", theta=0.4)

    def test_unknown_field_rejected(self):
        """Test that extra keys are a hard error."""
        with pytest.raises(ValidationError):
            InnovationSpec(family="StableIID", alhpa=1.5)

    def test_long_memory_flag(self, long_memory_spec, gaussian_spec):
        """Test long-memory classification."""
        assert long_memory_spec.is_long_memory
        assert not gaussian_spec.is_long_memory
        assert not InnovationSpec(family="LinearMA", theta=1.5).is_long_memory


class TestStableIID:
    """Test the stable sampler."""

    def test_gaussian_case_variance_two(self):
        """Test that alpha = 2 gives N(0, 2)."""
        eps = sample_stable_iid(2.0, 0.0, 200_000, NoiseStream(5))
        assert abs(np.var(eps) - 2.0) < 0.05
        assert abs(np.mean(eps)) < 0.02

    def test_deterministic(self):
        """Test identical draws for identical streams."""
        a = sample_stable_iid(1.3, 0.5, 100, NoiseStream(9, 2))
        b = sample_stable_iid(1.3, 0.5, 100, NoiseStream(9, 2))
        np.testing.assert_array_equal(a, b)

    def test_alpha_out_of_range(self):
        """Test domain checks."""
        with pytest.raises(DomainError):
            sample_stable_iid(2.5, 0.0, 10, NoiseStream(1))
        with pytest.raises(DomainError):
            sample_stable_iid(1.5, 1.5, 10, NoiseStream(1))

    def test_heavy_tail(self):
        """Test that the Hill estimate is near alpha for alpha = 1.2."""
        eps = sample_stable_iid(1.2, 0.0, 200_000, NoiseStream(11))
        assert abs(hill_estimator(eps, 500) - 1.2) < 0.25


class TestGarch:
    """Test the GARCH(1,1) sampler."""

    def test_constant_volatility_is_scaled_noise(self):
        """Test that a = b = 0 gives sqrt(omega) times the base noise after burn-in."""
        spec = InnovationSpec(family="Garch11", omega=4.0, a=0.0, b=0.0, burn_in=10)
        draw = sample_garch(spec, 50, NoiseStream(3), moment_draws=10_000)
        eta = NoiseStream(3).generator().standard_normal(60)
        np.testing.assert_array_equal(draw.eps, 2.0 * eta[10:])
        assert draw.stationary

    def test_stationary_variance_after_burn_in(self):
        """Test that the first retained value has variance omega / (1 - a - b)."""
        spec = InnovationSpec(family="Garch11", omega=1.0, a=0.3, b=0.2, burn_in=200)
        first = np.array([
            sample_garch(spec, 1, NoiseStream(21, r), moment_draws=10_000).eps[0]
            for r in range(4000)
        ])
        squares = first ** 2
        se = np.std(squares) / math.sqrt(squares.size)
        assert abs(np.mean(squares) - 2.0) <= 4.0 * se

    def test_kesten_index_exact_case(self):
        """Test that a = 0, b = 1 with normal noise has index 2."""
        spec = InnovationSpec(family="Garch11", a=0.0, b=1.0)
        assert abs(kesten_index(spec, draws=200_000) - 2.0) < 0.05

    def test_kesten_index_without_multiplier(self):
        """Test that b = 0 has no power-law tail."""
        spec = InnovationSpec(family="Garch11", a=0.3, b=0.0)
        assert kesten_index(spec, draws=10_000) == math.inf

    def test_nonstationary_flagged(self):
        """Test that a violated moment condition is flagged, not raised."""
        spec = InnovationSpec(family="Garch11", a=0.0, b=10.0, burn_in=0)
        draw = sample_garch(spec, 20, NoiseStream(1), moment_draws=100_000)
        assert not draw.stationary
        assert math.isnan(kesten_index(spec, draws=100_000))


class TestLinearMA:
    """Test the moving-average sampler."""

    @pytest.mark.parametrize("truncation", [10, 100])
    def test_convolution_matches_direct_sum(self, truncation):
        """Test direct and FFT convolution against the O(nM) loop."""
        spec = InnovationSpec(family="LinearMA", theta=1.5, truncation=truncation)
        fast = sample_linear_ma(spec, 50, NoiseStream(8)).eps
        slow = ma_direct(spec, 50, NoiseStream(8))
        np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-10)

    def test_single_coefficient_is_lagged_noise(self, gaussian_spec):
        """Test that c = (1,) reproduces the base noise."""
        eps = generate_innovations(gaussian_spec, 30, NoiseStream(4)).eps
        eta = NoiseStream(4).generator().standard_normal(31)
        np.testing.assert_array_equal(eps, eta[1:])

    def test_autocovariance_matches_coefficients(self):
        """Test sample autocovariances against sum_j c_j c_{j+k}."""
        spec = InnovationSpec(family="LinearMA", theta=1.5, truncation=50)
        eps = sample_linear_ma(spec, 200_000, NoiseStream(6)).eps
        c = ma_coefficients(spec, 50)
        for lag in (0, 1, 5):
            expected = float(np.dot(c[:c.size - lag], c[lag:]))
            observed = float(np.mean(eps[:eps.size - lag] * eps[lag:]))
            assert observed == pytest.approx(expected, abs=0.03)

    def test_long_memory_partial_sum_variance(self, long_memory_spec):
        """Test Var(S_n) / a_n^2 against the exact truncated variance, a_n = n^{3/2 - theta}."""
        n = 512
        sums = np.array([
            sample_linear_ma(long_memory_spec, n, NoiseStream(13, r)).eps.sum()
            for r in range(2000)
        ])
        observed = np.var(sums) / normalizer_a_n(long_memory_spec, n) ** 2
        assert observed == pytest.approx(long_memory_scale(long_memory_spec, n) ** 2, rel=0.12)

    def test_long_memory_scale_stays_bounded(self, long_memory_spec):
        """Test that sd(S_n) / n^{3/2 - theta} changes little from n = 256 to n = 4096."""
        ratio = long_memory_scale(long_memory_spec, 4096) / long_memory_scale(long_memory_spec, 256)
        assert 0.8 < ratio < 1.25

    def test_truncation_tail_mass(self):
        """Test the Hurwitz zeta tail for theta = 1."""
        spec = InnovationSpec(family="LinearMA", theta=1.0)
        assert truncation_tail_mass(spec, 1000) == pytest.approx(1.0 / 1000.5, abs=1e-6)

    def test_tail_mass_reported(self):
        """Test that the draw carries the neglected mass and truncation."""
        spec = InnovationSpec(family="LinearMA", theta=0.8, truncation=200)
        draw = sample_linear_ma(spec, 20, NoiseStream(1))
        assert draw.truncation == 200
        assert draw.truncation_tail_mass > 0

    def test_short_memory_condition(self):
        """Test the stable-noise coefficient thresholds."""
        assert ma_short_memory_condition(3.5, 1.0)
        assert not ma_short_memory_condition(2.5, 1.0)
        assert ma_short_memory_condition(2.5, 0.9)


class TestNormalizer:
    """Test a_n regimes."""

    def test_heavy_tail(self, stable_spec):
        """Test n^{1/alpha}."""
        assert normalizer_a_n(stable_spec, 1000) == pytest.approx(100.0)
        assert normalizer_regime(stable_spec) is NormalizerRegime.HEAVY_TAIL

    def test_root_n(self, gaussian_spec):
        """Test sqrt(n) for finite variance."""
        assert normalizer_a_n(gaussian_spec, 400) == pytest.approx(20.0)
        assert normalizer_a_n(InnovationSpec(family="StableIID", alpha=2.0), 400) == pytest.approx(20.0)

    def test_long_memory(self, long_memory_spec):
        """Test n^{3/2 - theta}."""
        assert normalizer_a_n(long_memory_spec, 1024) == pytest.approx(1024 ** 0.8)

    def test_boundary(self):
        """Test sqrt(n log n) at a GARCH index of exactly 2."""
        spec = InnovationSpec(family="Garch11", a=0.0, b=1.0)
        assert normalizer_a_n(spec, 100, tail=2.0) == pytest.approx(math.sqrt(100 * math.log(100)))

    def test_tail_index(self, stable_spec, gaussian_spec):
        """Test tail index lookup."""
        assert tail_index(stable_spec) == 1.5
        assert tail_index(gaussian_spec) == math.inf

    def test_invalid_n(self, gaussian_spec):
        """Test n < 1."""
        with pytest.raises(DomainError):
            normalizer_a_n(gaussian_spec, 0)


@pytest.mark.slow
class TestTailIndexAcceptance:
    """Kesten index against the empirical tail of a long GARCH path."""

    def test_kesten_matches_hill(self):
        """Test that the Hill estimate on 10^6 values is within 20% of the Kesten index."""
        spec = InnovationSpec(family="Garch11", omega=0.1, a=0.4, b=0.4)
        kappa = kesten_index(spec)
        eps = sample_garch(spec, 1_000_000, NoiseStream(31)).eps
        assert hill_estimator(eps, 1000) == pytest.approx(kappa, rel=0.20)
