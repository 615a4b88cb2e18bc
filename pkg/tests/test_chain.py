import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rayflow import chain
from rayflow.chain import RayFlowParams
from rayflow.gaussian import DegenerateVarianceError, Rng, mc_moments
from rayflow.schedule import ScheduleError, make_linear_schedule


def zscore(samples, mean, var):
    n, d = samples.shape
    m, v = mc_moments(samples)
    return max(np.max(np.abs(m - mean) / np.sqrt(var / n)), abs(v - var) / (var * np.sqrt(2 / (n * d - 1))))


@pytest.fixture
def params():
    return RayFlowParams(np.array([0.4, -0.9]), 0.6)


class TestParams:
    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            RayFlowParams(np.zeros(2), -0.1)

    def test_non_finite_mean(self):
        with pytest.raises(ValueError):
            RayFlowParams(np.array([np.nan, 0.0]), 0.1)


class TestForward:
    def test_sigma_zero_is_dirac(self, sched):
        p = RayFlowParams(np.array([1.0, 2.0]), 0.0)
        g = chain.forward_step(sched, p, np.array([0.5, 0.5]), 3)
        a = sched.a(3)
        assert g.var == 0.0
        np.testing.assert_allclose(g.mean, a * 0.5 + (1 - a) * p.eps_mu)

    def test_drift_fixed_point(self, sched, params):
        np.testing.assert_allclose(chain.forward_step(sched, params, params.eps_mu, 5).mean, params.eps_mu)

    def test_variance(self, sched, params):
        assert chain.forward_step(sched, params, np.zeros(2), 4).var == pytest.approx(sched.beta[3] ** 2 * 0.36)

    def test_out_of_range(self, sched, params):
        with pytest.raises(ScheduleError):
            chain.forward_step(sched, params, np.zeros(2), 0)
        with pytest.raises(ScheduleError):
            chain.forward_marginal(sched, params, np.zeros(2), sched.T + 1)

    def test_marginal_start_is_dirac(self, sched, params):
        g = chain.forward_marginal(sched, params, np.array([3.0, 1.0]), 0)
        assert g.var == 0.0
        np.testing.assert_array_equal(g.mean, [3.0, 1.0])

    @pytest.mark.parametrize("t", [1, 7, 16])
    def test_marginal_collapse(self, sched, params, t):
        np.testing.assert_allclose(chain.forward_marginal(sched, params, params.eps_mu, t).mean, params.eps_mu,
                                   atol=1e-15)

    def test_marginal_equals_symbolic_recursion(self, sched, params):
        x0 = np.array([1.3, 0.2])
        mu, v = x0.copy(), 0.0
        for t in range(1, sched.T + 1):
            a = sched.a(t)
            mu = a * mu + (1 - a) * params.eps_mu
            v = a * a * v + sched.beta[t - 1] ** 2 * params.sigma**2
            g = chain.forward_marginal(sched, params, x0, t)
            np.testing.assert_allclose(g.mean, mu, atol=1e-10)
            assert abs(g.var - v) < 1e-10

    def test_mc_chain_matches_marginal(self):
        s = make_linear_schedule(10, 0.1, 0.6)
        p = RayFlowParams(np.array([0.5, -1.0]), 0.8)
        x0 = np.array([-0.3, 2.0])
        x = chain.simulate_forward(s, p, x0, 100_000, Rng(5))
        g = chain.forward_marginal(s, p, x0, 10)
        assert zscore(x, g.mean, g.var) < 3

    def test_trajectory_mean_matches(self, sched, params):
        from rayflow.schedule import trajectory_point

        x0 = np.array([0.1, 0.2])
        pt = trajectory_point("rayflow", sched, x0, np.zeros(2), params.eps_mu, 9)
        np.testing.assert_allclose(pt, chain.forward_marginal(sched, params, x0, 9).mean)


class TestBackward:
    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 64), st.floats(0.005, 0.3), st.floats(0.0, 1.0), st.integers(0, 10**6), st.data())
    def test_simplification_identity(self, T, lo, frac, seed, data):
        s = make_linear_schedule(T, lo, lo + frac * (0.8 - lo))
        t = data.draw(st.integers(1, T))
        r = Rng(seed)
        p = RayFlowParams(r.normal(3), 0.5)
        x_t = r.normal(3)
        x0 = (x_t - chain.noise_mean(s, p.eps_mu, t)) / np.sqrt(s.abar(t))
        np.testing.assert_allclose(chain.backward_step_mean_long(s, p, x_t, x0, t),
                                   chain.backward_step(s, p, x_t, t).mean, atol=1e-10, rtol=0)

    def test_long_form_at_first_step_returns_x0(self, sched, params):
        x0 = np.array([0.3, 0.8])
        out = chain.backward_step_mean_long(sched, params, np.array([5.0, -5.0]), x0, 1)
        np.testing.assert_allclose(out, x0, atol=1e-12)

    def test_long_form_fixed_point(self, sched, params):
        out = chain.backward_step_mean_long(sched, params, params.eps_mu, params.eps_mu, 6)
        np.testing.assert_allclose(out, params.eps_mu, atol=1e-12)

    def test_reverse_fixed_point(self, sched, params):
        np.testing.assert_allclose(chain.backward_step(sched, params, params.eps_mu, 3).mean, params.eps_mu)

    def test_first_step_deterministic(self, sched, params):
        assert chain.backward_step(sched, params, np.zeros(2), 1).var == 0.0

    def test_deterministic_round_trip(self):
        s = make_linear_schedule(10, 0.1, 0.5)
        p = RayFlowParams(np.array([0.7, -0.2]), 0.0)
        x0 = np.array([1.5, 0.25])
        x_T = chain.forward_marginal(s, p, x0, 10).mean
        np.testing.assert_allclose(chain.reverse_mean_path(s, p, x_T), x0, atol=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 8), st.integers(0, 10**6))
    def test_forward_then_backward_mean_paths(self, T, d, seed):
        s = make_linear_schedule(T, 0.02, 0.4)
        r = Rng(seed)
        p = RayFlowParams(r.normal(d), 1e-4)
        x0 = r.normal(d)
        x_T = chain.forward_mean_path(s, p, x0)
        np.testing.assert_allclose(chain.reverse_mean_path(s, p, x_T), x0, atol=1e-8)


class TestBackwardMarginal:
    def test_single_step_base_case(self):
        s = make_linear_schedule(1, 0.3, 0.3)
        p = RayFlowParams(np.array([0.2]), 0.5)
        bm = chain.backward_marginal_recursive(s, p, np.array([1.0]), 0)
        step = chain.backward_step(s, p, np.array([1.0]), 1)
        np.testing.assert_array_equal(bm.dist.mean, step.mean)
        assert bm.dist.var == step.var

    def test_one_step_below_T(self, sched, params):
        e = np.array([0.3, 0.1])
        bm = chain.backward_marginal_recursive(sched, params, e, sched.T - 1)
        step = chain.backward_step(sched, params, e, sched.T)
        np.testing.assert_allclose(bm.dist.mean, step.mean, rtol=1e-15, atol=1e-15)
        assert bm.dist.var == step.var

    def test_optimal_noise_means_close_form(self, sched, params):
        e = np.array([1.1, -0.4])
        nm = [chain.noise_mean(sched, params.eps_mu, s) for s in range(1, sched.T + 1)]
        bm = chain.backward_marginal_recursive(sched, params, e, 0, nm)
        r = np.sqrt(sched.abar(sched.T))
        np.testing.assert_allclose(bm.dist.mean, e / r - (1 - r) / r * params.eps_mu, atol=1e-10)

    def test_mean_agrees_with_reverse_mean_path(self, sched, params):
        e = np.array([0.2, 0.9])
        for t in (0, 4, 11):
            bm = chain.backward_marginal_recursive(sched, params, e, t)
            np.testing.assert_allclose(bm.dist.mean, chain.reverse_mean_path(sched, params, e, t), atol=1e-10)

    @pytest.mark.parametrize("explicit", [False, True])
    def test_mc_reverse_chain(self, explicit):
        s = make_linear_schedule(8, 0.1, 0.6)
        p = RayFlowParams(np.array([0.5]), 0.3)
        r = Rng(21)
        nm = [r.normal(1) for _ in range(8)] if explicit else None
        e = np.array([-0.7])
        for t in (0, 3):
            bm = chain.backward_marginal_recursive(s, p, e, t, nm)
            x = chain.simulate_reverse(s, p, e, 100_000, r.split(t), t, nm)
            assert zscore(x, bm.dist.mean, bm.dist.var) < 3

    def test_range_and_length_errors(self, sched, params):
        with pytest.raises(ValueError):
            chain.backward_marginal_recursive(sched, params, np.zeros(2), sched.T)
        with pytest.raises(ValueError):
            chain.backward_marginal_recursive(sched, params, np.zeros(2), -1)
        with pytest.raises(ValueError):
            chain.backward_marginal_recursive(sched, params, np.zeros(2), 0, [np.zeros(2)] * 3)


class TestPathProbability:
    def test_sigma_zero_rejected(self, sched):
        p = RayFlowParams(np.zeros(2), 0.0)
        with pytest.raises(DegenerateVarianceError):
            chain.path_probability(sched, p, np.zeros(2), np.zeros(2))

    def test_forward_leg_mode(self, sched, params):
        x0 = np.array([0.5, 0.5])
        mode = chain.forward_marginal(sched, params, x0, sched.T).mean
        h = 1e-5
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            up = chain.path_probability(sched, params, x0, mode + e)[0]
            dn = chain.path_probability(sched, params, x0, mode - e)[0]
            assert abs(up - dn) / (2 * h) < 1e-6

    def test_sum(self, sched, params):
        lf, lb, lp = chain.path_probability(sched, params, np.array([0.1, 0.2]), np.array([0.3, -0.1]))
        assert lp == lf + lb

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_translation_invariance(self, seed):
        s = make_linear_schedule(8, 0.1, 0.5)
        r = Rng(seed)
        c = 3 * r.normal(2)
        p = RayFlowParams(r.normal(2), 0.7)
        x0, e = r.normal(2), r.normal(2)
        nm = [r.normal(2) for _ in range(8)]
        base = chain.path_probability(s, p, x0, e, nm)[2]
        # the noise means live on the (1 - sqrt(abar_s)) scale of eps_mu, so they shift by that factor
        nm_c = [m + (1 - np.sqrt(s.abar(k + 1))) * c for k, m in enumerate(nm)]
        moved = chain.path_probability(s, RayFlowParams(p.eps_mu + c, 0.7), x0 + c, e + c, nm_c)[2]
        assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)

    def test_optimal_noise_means_maximise_backward_leg(self):
        s = make_linear_schedule(8, 0.1, 0.5)
        r = Rng(77)
        wins = 0
        for i in range(100):
            x0 = r.normal(1)
            op = chain.optimal_params(s, x0, [r.normal(1) for _ in range(8)], sigma_star=0.3)
            p = op.as_params()
            best = chain.path_probability(s, p, x0, op.eps_hat_mu_star, op.forward_noise_means)[1]
            noisy = [m + 0.1 * r.normal(1) for m in op.forward_noise_means]
            wins += best >= chain.path_probability(s, p, x0, op.eps_hat_mu_star, noisy)[1]
        assert wins >= 99


class TestOptimalParams:
    def test_constant_average(self, sched):
        v = np.array([0.3, -0.7])
        op = chain.optimal_params(sched, np.zeros(2), [v] * sched.T)
        np.testing.assert_allclose(op.eps_mu_star, v)

    def test_collapse(self, sched):
        v = np.array([0.3, -0.7])
        op = chain.optimal_params(sched, v, [v] * sched.T)
        np.testing.assert_allclose(op.eps_hat_mu_star, v, atol=1e-15)

    def test_invariants(self, sched, rng):
        x0 = rng.normal(2)
        op = chain.optimal_params(sched, x0, rng.normal((sched.T, 2)))
        r = np.sqrt(sched.abar(sched.T))
        np.testing.assert_allclose(op.eps_hat_mu_star, r * x0 + (1 - r) * op.eps_mu_star, atol=1e-12)
        for t in range(1, sched.T + 1):
            np.testing.assert_allclose(op.forward_noise_means[t - 1], (1 - np.sqrt(sched.abar(t))) * op.eps_mu_star)
        assert op.sigma_star == chain.DEFAULT_SIGMA_STAR

    def test_length_mismatch(self, sched):
        with pytest.raises(ValueError):
            chain.optimal_params(sched, np.zeros(2), np.zeros((sched.T - 1, 2)))

    def test_stochastic_reconstruction_band(self, rng):
        s = make_linear_schedule(10, 0.1, 0.5)
        x0 = rng.normal(2)
        op = chain.optimal_params(s, x0, rng.normal((10, 2)))
        x = chain.simulate_reverse(s, op.as_params(), op.eps_hat_mu_star, 200, rng.split(1))
        v = sum(s.btilde(k) / s.abar(k - 1) for k in range(1, 11)) * op.sigma_star**2
        assert np.max(np.abs(x - x0)) <= 10 * np.sqrt(v)

    def test_reconstruction_variance_scales_with_sigma_squared(self, rng):
        s = make_linear_schedule(64, 0.02, 0.3)
        x0 = rng.normal(2)
        op = chain.optimal_params(s, x0, rng.normal((64, 2)))
        p = op.as_params()
        v = []
        for k, sig in enumerate((p.sigma, 2 * p.sigma)):
            x = chain.simulate_reverse(s, RayFlowParams(p.eps_mu, sig), op.eps_hat_mu_star, 100_000, rng.split(k))
            v.append(np.mean(np.sum((x - x0) ** 2, axis=1)))
        assert 3.5 <= v[1] / v[0] <= 4.5
