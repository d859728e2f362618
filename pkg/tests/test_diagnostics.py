import numpy as np
import pytest

from landing.diagnostics import (
    PropertyReport,
    check_merit_inequalities,
    check_rate_halving,
    check_safeguard_containment,
    fd_directional_derivative,
    run_suite,
)
from landing.errors import ConfigError
from landing.geometry import LandingParams, distance_sq, gram_residual, sample_safe_region
from landing.optim import RunRecord
from landing.problems import gen_pca_data, pca_objective


def synthetic_record(i, grad_sq, n_of_x=0.0):
    return RunRecord(i, float(i), 0.0, 0.0, grad_sq, 2 * np.sqrt(n_of_x), n_of_x, 0.0, 0.0, False)


class TestPropertyReport:
    def test_passed_iff_within_tolerance(self):
        assert PropertyReport("x", 1, 0.5, 0.5).passed
        assert not PropertyReport("x", 1, 0.5001, 0.5).passed

    def test_line_format(self):
        line = PropertyReport("foo", 10, 1e-12, 1e-10).line()
        assert line.startswith("PASS foo") and "draws" in line


class TestFdDirectionalDerivative:
    def test_quadratic_exact(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 3))
        d = rng.standard_normal((5, 3))
        got = fd_directional_derivative(lambda y: 0.5 * np.sum(y * y), x, d, 1e-5)
        assert got == pytest.approx(float(np.sum(x * d)), abs=1e-8)

    def test_linear_exact(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((4, 2))
        x = rng.standard_normal((4, 2))
        d = rng.standard_normal((4, 2))
        got = fd_directional_derivative(lambda y: np.sum(m * y), x, d, 1e-4)
        assert got == pytest.approx(float(np.sum(m * d)), rel=1e-9)

    def test_normal_penalty_gradient(self):
        rng = np.random.default_rng(2)
        x = sample_safe_region(6, 2, 0.5, rng, dist=0.3)
        grad_n = x @ gram_residual(x)
        got = fd_directional_derivative(distance_sq, x, grad_n, 1e-6)
        assert got == pytest.approx(float(np.sum(grad_n * grad_n)), rel=1e-6)

    def test_zero_direction(self):
        assert fd_directional_derivative(lambda y: 1.0, np.ones((2, 2)), np.zeros((2, 2)), 1e-5) == 0.0


class TestSafeguardContainment:
    def test_passes_at_unit_scale(self):
        rep = check_safeguard_containment(30, 5, 1.0, 0.5, 1000, seed=0)
        assert rep.passed and rep.draws == 1000

    def test_boundary_draws_included(self):
        rep = check_safeguard_containment(10, 3, 1.0, 0.5, 50, seed=1)
        assert rep.passed

    def test_inflated_safeguard_fails(self):
        rep = check_safeguard_containment(30, 5, 1.0, 0.5, 1000, seed=2, eta_scale=1.5)
        assert not rep.passed
        assert rep.worst_violation > 1e-6


class TestMeritInequalities:
    def _pca_setup(self, mu_factor=1.0, seed=3):
        obj = pca_objective(gen_pca_data(16, 3, 150, 0.1, seed))
        base = LandingParams.from_objective(obj, rng=np.random.default_rng(seed + 1))
        params = LandingParams(
            lam=base.lam, epsilon=base.epsilon, mu=base.mu * mu_factor,
            l_smooth=base.l_smooth, s_bound=base.s_bound, l_hat=base.l_hat,
            l_fh=base.l_fh, a_tilde=base.a_tilde,
        )
        return obj, params

    def test_pca_at_lower_bound_passes(self):
        obj, params = self._pca_setup()
        rep = check_merit_inequalities(obj, params, 150, seed=5)
        assert rep.passed

    def test_on_manifold_points_trivially_pass(self):
        obj, params = self._pca_setup()
        # draws at zero distance: N = 0 and the bound reduces to the gradient part
        rng = np.random.default_rng(6)
        from landing.geometry import landing_field, merit_value
        from landing.diagnostics import fd_directional_derivative as fd

        for _ in range(20):
            x = sample_safe_region(16, 3, 0.5, rng, dist=0.0)
            g = obj.grad_full(x)
            fdc = landing_field(g, x, params.lam)
            lhs = fd(lambda y: merit_value(y, obj.value(y), obj.grad_full(y), params.mu),
                     x, fdc.total, 1e-5 * max(1.0, float(np.linalg.norm(x))))
            assert lhs >= 0.49 * fdc.tangent_norm**2 - 1e-9


class TestRateHalving:
    def test_decaying_trace_passes(self):
        trace_k = [synthetic_record(i, 1.0 / (1 + i), 0.5 / (1 + i)) for i in range(100)]
        trace_2k = [synthetic_record(i, 1.0 / (1 + i), 0.5 / (1 + i)) for i in range(200)]
        assert check_rate_halving(trace_k, trace_2k).passed

    def test_constant_gradient_trace_fails(self):
        trace_k = [synthetic_record(i, 1.0) for i in range(100)]
        trace_2k = [synthetic_record(i, 1.0) for i in range(200)]
        assert not check_rate_halving(trace_k, trace_2k).passed

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            check_rate_halving([], [])


class TestSuites:
    def test_geometry_suite_passes(self):
        reports = run_suite("geometry", seed=7)
        assert reports and all(r.passed for r in reports)

    def test_geometry_suite_negative_control(self):
        reports = run_suite("geometry", seed=8, eta_scale=1.5)
        assert any(not r.passed for r in reports)

    def test_merit_suite_passes(self):
        reports = run_suite("merit", seed=9)
        assert reports and all(r.passed for r in reports)

    def test_merit_suite_negative_control(self):
        reports = run_suite("merit", seed=10, mu_scale=0.25)
        assert any(not r.passed for r in reports)

    def test_descent_suite_passes(self):
        reports = run_suite("descent", seed=11)
        assert reports and all(r.passed for r in reports)

    def test_oracle_suite_passes(self):
        reports = run_suite("oracle", seed=12)
        assert reports and all(r.passed for r in reports)

    def test_unknown_suite_rejected(self):
        with pytest.raises(ConfigError):
            run_suite("nope", seed=0)

    def test_deterministic_under_seed(self):
        a = run_suite("geometry", seed=13)
        b = run_suite("geometry", seed=13)
        assert [(r.name, r.worst_violation) for r in a] == [(r.name, r.worst_violation) for r in b]
