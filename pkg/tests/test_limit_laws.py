"""
Unit Tests for Limit Laws
Tests path and field samplers, forward-sum integrals, scalar limits and ensembles
"""

import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from stochastics.distributions import normal_reference
from stochastics.errors import DomainError, NumericalError, RejectedDrawError
from stochastics.estimators import lse_estimate
from stochastics.innovations import InnovationSpec, generate_innovations
from stochastics.limit_laws import (
    CovModel,
    FieldGrid,
    JointMode,
    LimitKind,
    LimitParams,
    PathGrid,
    covariance_factor,
    export_ensemble,
    fbm_covariance,
    limit_lse_error,
    limit_quantile_error,
    limit_sup_statistic,
    long_memory_scale,
    long_run_covariance,
    plugin_covariance,
    prelimit_pair,
    prepare_limit,
    simulate_fbm,
    simulate_mark_field,
    simulate_stable_path,
    stochastic_integral,
)
from stochastics.processes import simulate_series
from stochastics.streams import NoiseStream

K = 16


def linear_path(k: int = K) -> PathGrid:
    return PathGrid(k, np.arange(k + 1) / k)


class TestGrids:
    """Test path and field containers."""

    def test_path_validation(self):
        """Test minimum k, length and zero start."""
        with pytest.raises(DomainError):
            PathGrid(8, np.zeros(9))
        with pytest.raises(DomainError):
            PathGrid(K, np.zeros(K))
        with pytest.raises(DomainError):
            PathGrid(K, np.ones(K + 1))

    def test_field_mark_lookup(self):
        """Test reading one mark of a field."""
        grid = np.array([-1.0, 0.0, 1.0])
        values = np.zeros((K + 1, 3))
        values[1:, 1] = 1.0
        field = FieldGrid(K, grid, values, CovModel.PLUGIN_IID)
        np.testing.assert_array_equal(field.at(0.0).values, values[:, 1])
        with pytest.raises(DomainError):
            field.at(0.5)


class TestStableAndFbm:
    """Test the path samplers."""

    def test_stable_path_shape_and_determinism(self):
        """Test a batch of stable paths."""
        a = simulate_stable_path(1.5, 0.0, 32, NoiseStream(1), paths=3)
        b = simulate_stable_path(1.5, 0.0, 32, NoiseStream(1), paths=3)
        assert a.values.shape == (3, 33)
        np.testing.assert_array_equal(a.values, b.values)

    def test_stable_self_similarity(self):
        """Test S(1/2) against 2^{-1/alpha} S(1) in law."""
        alpha = 1.5
        half = simulate_stable_path(alpha, 0.0, 64, NoiseStream(12), paths=4000).values[:, 32]
        full = simulate_stable_path(alpha, 0.0, 64, NoiseStream(13), paths=4000).values[:, -1]
        assert stats.ks_2samp(half, 2.0 ** (-1.0 / alpha) * full).pvalue > 1e-3

    def test_brownian_variance(self):
        """Test that alpha = 2 with unit_variance gives Var S(1) = 1."""
        path = simulate_stable_path(2.0, 0.0, K, NoiseStream(2), paths=20_000, unit_variance=True)
        assert abs(np.var(path.values[:, -1]) - 1.0) < 0.05

    def test_unit_variance_needs_gaussian_case(self):
        """Test the unit_variance guard."""
        with pytest.raises(DomainError):
            simulate_stable_path(1.5, 0.0, K, NoiseStream(1), unit_variance=True)

    @pytest.mark.parametrize("theta,tolerance", [(0.6, 4.0), (0.7, 3.0), (0.9, 4.0)])
    def test_fbm_covariance(self, theta, tolerance):
        """Test empirical covariances at grid times against (s^2H + t^2H - |t-s|^2H)/2."""
        k = 64
        z = simulate_fbm(theta, k, NoiseStream(4), paths=10_000).values
        hurst = 1.5 - theta
        for i, j in ((8, 40), (16, 16), (16, 48), (32, 64), (64, 64)):
            products = z[:, i] * z[:, j]
            expected = fbm_covariance(i / k, j / k, hurst)
            se = np.std(products) / math.sqrt(products.size)
            assert abs(np.mean(products) - expected) <= tolerance * se

    def test_forward_sum_identity(self):
        """Test that the forward sum of Z dZ approaches Z(1)^2/2 as k grows."""
        medians = []
        for k in (2 ** 8, 2 ** 10, 2 ** 12, 2 ** 14):
            z = simulate_fbm(0.7, k, NoiseStream(5), paths=100)
            gap = np.abs(stochastic_integral(z, z) - 0.5 * z.values[:, -1] ** 2)
            medians.append(float(np.median(gap)))
        assert medians[-1] < 0.01
        assert all(a > b for a, b in zip(medians, medians[1:]))

    def test_fbm_theta_range(self):
        """Test theta outside (1/2, 1]."""
        with pytest.raises(DomainError):
            simulate_fbm(0.5, K, NoiseStream(1))
        with pytest.raises(DomainError):
            simulate_fbm(1.2, K, NoiseStream(1))

    def test_long_memory_scale(self, long_memory_spec):
        """Test the partial-sum standard deviation is positive and finite."""
        sigma = long_memory_scale(long_memory_spec, 1000)
        assert math.isfinite(sigma) and sigma > 0


class TestMarkField:
    """Test the Gaussian mark field."""

    def test_plugin_marginals(self):
        """Test Var W(t, x) = t F(x)(1 - F(x))."""
        F = normal_reference()
        grid = np.array([-1.0, 0.0, 1.0])
        field = simulate_mark_field(K, grid, CovModel.PLUGIN_IID, F, NoiseStream(6), paths=20_000)
        target = F.cdf(grid) * (1.0 - F.cdf(grid))
        np.testing.assert_allclose(np.var(field.values[:, -1, :], axis=0), target, rtol=0.03)
        assert abs(np.var(field.values[:, K // 2, 1]) / (0.5 * 0.25) - 1.0) < 0.05

    def test_plugin_cross_covariance(self):
        """Test Cov W(1, x), W(1, y) = F(x) - F(x) F(y) at F(x) = 0.3, F(y) = 0.6."""
        F = normal_reference()
        grid = F.ppf(np.array([0.3, 0.6]))
        field = simulate_mark_field(K, grid, CovModel.PLUGIN_IID, F, NoiseStream(14), paths=20_000)
        end = field.values[:, -1, :]
        products = end[:, 0] * end[:, 1]
        se = np.std(products) / math.sqrt(products.size)
        assert abs(np.mean(products) - (0.3 - 0.3 * 0.6)) <= 4.0 * se

    def test_independent_increments(self):
        """Test that W(1/2, x) and W(1, x) - W(1/2, x) are uncorrelated."""
        F = normal_reference()
        field = simulate_mark_field(K, [0.0, 0.5], CovModel.PLUGIN_IID, F, NoiseStream(15), paths=20_000)
        first = field.values[:, K // 2, :]
        second = field.values[:, -1, :] - first
        for m in range(2):
            assert abs(np.corrcoef(first[:, m], second[:, m])[0, 1]) < 0.03
        assert abs(np.corrcoef(first[:, 0], second[:, 1])[0, 1]) < 0.03

    def test_field_starts_at_zero(self):
        """Test W(0, x) = 0 and the grid shape."""
        field = simulate_mark_field(K, [0.0, 1.0], "PlugInIID", normal_reference(), NoiseStream(1))
        assert field.values.shape == (K + 1, 2)
        assert np.all(field.values[0] == 0.0)

    def test_factor_reconstructs_covariance(self):
        """Test L L^T = Gamma for the plug-in covariance."""
        gamma = plugin_covariance(np.linspace(-2, 2, 9), normal_reference()).gamma
        factor = covariance_factor(gamma)
        np.testing.assert_allclose(factor @ factor.T, gamma, atol=1e-12)

    def test_indefinite_covariance(self):
        """Test that a negative eigenvalue is a numerical failure."""
        with pytest.raises(NumericalError):
            covariance_factor(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_long_run_covariance(self):
        """Test the batch-means estimate shape, symmetry and block guard."""
        eps = np.random.default_rng(0).standard_normal(4000)
        grid = np.array([-1.0, 0.0, 1.0])
        mu = long_run_covariance(eps, grid, normal_reference())
        assert mu.gamma.shape == (3, 3)
        np.testing.assert_allclose(mu.gamma, mu.gamma.T)
        assert mu.cov_model is CovModel.LONG_RUN
        with pytest.raises(DomainError):
            long_run_covariance(eps[:3], grid, normal_reference(), block=2)

    def test_long_run_needs_covariance(self):
        """Test that LongRunEstimate cannot be built from a CDF alone."""
        with pytest.raises(DomainError):
            simulate_mark_field(K, [0.0, 1.0], CovModel.LONG_RUN, normal_reference(), NoiseStream(1))


class TestIntegrals:
    """Test forward sums and the scalar limits."""

    def test_forward_sums(self):
        """Test sum integrand(t_j) (I(t_{j+1}) - I(t_j)) on linear paths."""
        path = linear_path()
        assert stochastic_integral(np.ones(K + 1), path) == 1.0
        assert stochastic_integral(path, path) == pytest.approx(120.0 / 256.0)

    def test_grid_mismatch(self):
        """Test that time grids must agree."""
        with pytest.raises(DomainError):
            stochastic_integral(np.ones(10), linear_path())

    def test_field_integral_per_mark(self):
        """Test integrating against every mark of a field at once."""
        values = np.stack([np.arange(K + 1) / K, 2.0 * np.arange(K + 1) / K], axis=1)
        field = FieldGrid(K, np.array([0.0, 1.0]), values, CovModel.PLUGIN_IID)
        result = stochastic_integral(np.ones(K + 1), field)
        np.testing.assert_allclose(result, [1.0, 2.0])
        assert stochastic_integral(np.ones(K + 1), field, x=1.0) == pytest.approx(2.0)

    def test_quantile_error_formula(self):
        """Test -(1/f) int S dW / int S^2 dt on linear paths."""
        path = linear_path()
        denominator = integrate.trapezoid(path.values ** 2, dx=1.0 / K)
        expected = -(120.0 / 256.0) / denominator / 0.5
        assert limit_quantile_error(path, path, 0.0, 0.5) == pytest.approx(expected)

    def test_lse_error_formula(self):
        """Test (S(1)^2 - s^2) / (2 int S^2 dt)."""
        path = linear_path()
        denominator = integrate.trapezoid(path.values ** 2, dx=1.0 / K)
        assert limit_lse_error(path, 0.5) == pytest.approx(0.25 / denominator)

    def test_degenerate_draw_rejected(self):
        """Test that a zero path cannot be used."""
        zero = PathGrid(K, np.zeros(K + 1))
        with pytest.raises(RejectedDrawError):
            limit_lse_error(zero, 0.0)
        with pytest.raises(RejectedDrawError):
            limit_quantile_error(zero, linear_path(), 0.0, 0.4)

    def test_zero_density_rejected(self):
        """Test f(q) <= 0."""
        with pytest.raises(DomainError):
            limit_quantile_error(linear_path(), linear_path(), 0.0, 0.0)


class TestPrelimit:
    """Test the joint pre-limit draw."""

    def test_matches_direct_counting(self, gaussian_spec):
        """Test S and W against sums over the same innovations."""
        block = 2
        grid = np.array([-1.0, 0.0, 1.0])
        F = normal_reference()
        draw = prelimit_pair(gaussian_spec, K, block, grid, F, NoiseStream(3))
        eps = generate_innovations(gaussian_spec, K * block, NoiseStream(3)).eps
        n_total = K * block

        expected_s = np.concatenate(([0.0], np.cumsum(eps)[block - 1::block])) / math.sqrt(n_total)
        np.testing.assert_allclose(draw.s_path.values, expected_s)
        assert draw.s_squared == pytest.approx(np.dot(eps, eps) / n_total)

        for j in range(K + 1):
            head = eps[:j * block]
            for m, x in enumerate(grid):
                direct = np.sum((head <= x) - F.cdf(x)) / math.sqrt(n_total)
                assert draw.field.values[j, m] == pytest.approx(direct, abs=1e-12)

    def test_without_field(self, gaussian_spec):
        """Test x_grid=None skips the field."""
        draw = prelimit_pair(gaussian_spec, K, 1, None, normal_reference(), NoiseStream(1))
        assert draw.field is None


class TestEnsembles:
    """Test limit setups and Monte Carlo ensembles."""

    def test_source_selection(self, stable_spec, gaussian_spec):
        """Test exact stable sampling versus pre-limit draws."""
        stable = LimitParams(spec=stable_spec, F_id="normal", grid_size=11, k=K)
        assert prepare_limit(LimitKind.MARKED_SUP, stable).source == "stable"
        forced = stable.model_copy(update={"joint": JointMode.JOINT})
        assert prepare_limit(LimitKind.MARKED_SUP, forced).source == "prelimit_joint"
        gaussian = LimitParams(spec=gaussian_spec, F_id="normal", grid_size=11, k=K,
                               joint=JointMode.INDEPENDENT)
        assert prepare_limit(LimitKind.MARKED_SUP, gaussian).source == "prelimit_independent"

    def test_long_memory_kind_needs_long_memory(self, gaussian_spec):
        """Test the long-memory guard."""
        params = LimitParams(spec=gaussian_spec, F_id="normal", k=K)
        with pytest.raises(DomainError):
            prepare_limit(LimitKind.LONG_MEMORY_SUP, params)

    def test_quantile_kind_needs_density(self, gaussian_spec):
        """Test that f(F^{-1}(tau)) = 0 is refused."""
        params = LimitParams(spec=gaussian_spec, F_id="two_point", k=K)
        with pytest.raises(DomainError):
            prepare_limit(LimitKind.QUANTILE_ERROR, params)

    def test_zero_weight_ensemble(self, stable_spec):
        """Test that g = 0 gives a sup of exactly 0 on every draw."""
        params = LimitParams(spec=stable_spec, g_id="zero", F_id="normal", grid_size=11, k=K)
        ensemble = limit_sup_statistic(LimitKind.MARKED_SUP, params, 10, NoiseStream(8))
        assert np.all(ensemble.draws == 0.0)
        assert ensemble.replications == 10

    @pytest.mark.parametrize("kind", [LimitKind.LSE_ERROR, LimitKind.RESIDUAL_LSE_SUP])
    def test_thread_count_invariance(self, gaussian_spec, kind):
        """Test identical draws for 1 and 4 threads."""
        params = LimitParams(spec=gaussian_spec, F_id="normal", grid_size=11, k=K, block=2)
        one = limit_sup_statistic(kind, params, 20, NoiseStream(9), threads=1)
        four = limit_sup_statistic(kind, params, 20, NoiseStream(9), threads=4)
        np.testing.assert_array_equal(one.draws, four.draws)

    def test_stable_source_thread_invariance(self, stable_spec):
        """Test thread invariance with exact stable paths and a simulated field."""
        params = LimitParams(spec=stable_spec, F_id="normal", grid_size=11, k=K)
        one = limit_sup_statistic(LimitKind.RESIDUAL_QUANTILE_SUP, params, 12, NoiseStream(3), threads=1)
        three = limit_sup_statistic(LimitKind.RESIDUAL_QUANTILE_SUP, params, 12, NoiseStream(3), threads=3)
        np.testing.assert_array_equal(one.draws, three.draws)
        assert np.all(np.isfinite(one.draws))

    def test_long_memory_ensemble(self, long_memory_spec):
        """Test fBm-driven draws and their metadata."""
        params = LimitParams(spec=long_memory_spec, k=64, grid_size=11, n_ref=1000)
        ensemble = limit_sup_statistic(LimitKind.LONG_MEMORY_SUP, params, 5, NoiseStream(2))
        assert ensemble.source == "fbm"
        assert np.all(np.isfinite(ensemble.draws))
        assert ensemble.metadata()["sigma"] > 0

    @pytest.mark.parametrize("kind,family", [
        (LimitKind.QUANTILE_ERROR, "gaussian"),
        (LimitKind.MARKED_SUP, "stable"),
    ])
    def test_refinement_stability(self, gaussian_spec, stable_spec, kind, family):
        """Test that doubling the time grid leaves the law of the draws unchanged."""
        spec = gaussian_spec if family == "gaussian" else stable_spec
        coarse = LimitParams(spec=spec, F_id="normal", grid_size=21, k=256)
        fine = coarse.model_copy(update={"k": 512})
        a = limit_sup_statistic(kind, coarse, 1000, NoiseStream(16), threads=4)
        b = limit_sup_statistic(kind, fine, 1000, NoiseStream(17), threads=4)
        assert stats.ks_2samp(a.draws, b.draws).pvalue > 1e-3

    def test_lse_limit_matches_finite_n(self, stable_spec):
        """Test the alpha = 1.5 least-squares limit against n (beta_hat - 1) at n = 1000."""
        finite = [
            lse_estimate(simulate_series(stable_spec, 1000, NoiseStream(18, r))).scaled_error
            for r in range(800)
        ]
        params = LimitParams(spec=stable_spec, F_id="normal", k=1024)
        ensemble = limit_sup_statistic(LimitKind.LSE_ERROR, params, 800, NoiseStream(19))
        assert ensemble.source == "stable"
        assert stats.ks_2samp(finite, ensemble.draws).pvalue > 1e-3

    def test_long_memory_single_mark(self, long_memory_spec):
        """Test that on the grid {0} a draw is -f(0) times the forward sum of g(Z) dZ."""
        params = LimitParams(spec=long_memory_spec, k=64, grid_size=1, n_ref=1000)
        setup = prepare_limit(LimitKind.LONG_MEMORY_SUP, params)
        np.testing.assert_array_equal(setup.x_grid, [0.0])
        ensemble = limit_sup_statistic(LimitKind.LONG_MEMORY_SUP, params, 3, NoiseStream(2))
        for r in range(3):
            stream = NoiseStream(2).replicate(r).child(0).child(0)
            z = simulate_fbm(0.7, 64, stream).scaled(setup.sigma)
            expected = -float(setup.F.pdf(0.0)) * stochastic_integral(z, z)
            assert ensemble.draws[r] == pytest.approx(expected, rel=1e-12)

    def test_replications_guard(self, gaussian_spec):
        """Test R >= 1."""
        params = LimitParams(spec=gaussian_spec, F_id="normal", k=K)
        with pytest.raises(DomainError):
            limit_sup_statistic(LimitKind.LSE_ERROR, params, 0, NoiseStream(1))

    def test_export(self, gaussian_spec, tmp_path):
        """Test the draws CSV and metadata JSON."""
        params = LimitParams(spec=gaussian_spec, F_id="normal", k=K, block=2)
        ensemble = limit_sup_statistic(LimitKind.LSE_ERROR, params, 5, NoiseStream(1, 40))
        draws_path, meta_path = export_ensemble(ensemble, tmp_path, extra={"config_hash": "abc"})
        assert draws_path.name == "limit_draws.csv"
        with open(meta_path) as f:
            meta = json.load(f)
        assert meta["kind"] == "lse_error"
        assert meta["k"] == K
        assert meta["stream_offset"] == 40
        assert meta["config_hash"] == "abc"
        assert meta["cov_model"] == "PlugInIID"
