import math

import numpy as np
import pytest

from jumpgop.deflator import (ABSOLUTELY_CONTINUOUS_ONLY, EQUIVALENT, NOT_EQUIVALENT, DeflatorSolution,
                              analytic_benchmarked_expectation, analytic_deflator_expectation, closed_form_deflator,
                              deflator_drift, deflator_system, radon_nikodym_path, solve_unique_deflator)
from jumpgop.errors import IllConditioned, NoGop
from jumpgop.market import MarketSpec, binding_threshold
from jumpgop.paths import Strategy, simulate_deflator, simulate_path

import oracles
from conftest import random_spec, two_asset


def eye_spec(theta, lam=1.0):
    return MarketSpec.from_theta(m=1, horizon=1.0, r=0.0, theta=theta, b=np.eye(2), lam=[lam])


class TestUniqueSolve:
    def test_identity_example(self):
        sol = solve_unique_deflator(eye_spec([0.1, 0.3]))
        np.testing.assert_allclose(sol.phi, [[-0.1]], atol=1e-15)
        np.testing.assert_allclose(sol.psi, [[0.7]], atol=1e-15)
        assert sol.flags == (EQUIVALENT,)

    def test_zero_theta(self):
        sol = solve_unique_deflator(eye_spec([0.0, 0.0]))
        np.testing.assert_array_equal(sol.phi, [[0.0]])
        np.testing.assert_array_equal(sol.psi, [[1.0]])

    def test_not_equivalent(self):
        sol = solve_unique_deflator(eye_spec([0.1, 1.2]))
        assert sol.psi[0, 0] == pytest.approx(-0.2, abs=1e-14)
        assert sol.flags == (NOT_EQUIVALENT,) and not sol.equivalent

    def test_boundary_flag(self):
        assert closed_form_deflator(eye_spec([0.1, 2.0], lam=4.0)).flags == (ABSOLUTELY_CONTINUOUS_ONLY,)

    def test_residual_and_closed_form(self, rng):
        for _ in range(300):
            s = random_spec(rng, n_pieces=2, bounded_event_risk=False)
            gen = solve_unique_deflator(s)
            cf = closed_form_deflator(s)
            assert np.all(gen.residual < 1e-10)
            assert np.max(np.abs(gen.phi - cf.phi), initial=0.0) < 1e-12
            assert np.max(np.abs(gen.psi - cf.psi), initial=0.0) < 1e-12

    def test_system_is_drift_cancellation(self, rng):
        s = random_spec(rng, d=3, m=1)
        A, rhs = deflator_system(s, 0)
        cf = closed_form_deflator(s)
        x = np.concatenate([cf.phi[0], cf.psi[0]])
        b, th, sl = s.b[0], s.theta[0], s.sqrt_lam[0]
        lhs = b[:, :1] @ cf.phi[0] + b[:, 1:] @ (cf.psi[0] * sl)
        np.testing.assert_allclose(A @ x, lhs, atol=1e-14)
        np.testing.assert_allclose(lhs, -b @ th + b[:, 1:] @ sl, atol=1e-12)

    def test_ill_conditioned(self):
        s = MarketSpec.constant(d=2, m=1, horizon=1.0, r=0.0, a=[0.1, 0.1], b=[[1, 1], [1, 1 + 1e-15]], lam=[1.0])
        with pytest.raises(IllConditioned):
            solve_unique_deflator(s, 0)


class TestRadonNikodym:
    def test_trivial_kernel(self, elmm):
        p = simulate_path(elmm, 0, 0, n_steps=10)
        sol = DeflatorSolution(np.zeros((1, 1)), np.ones((1, 1)), np.zeros(1), (EQUIVALENT,))
        np.testing.assert_array_equal(radon_nikodym_path(sol, p, elmm).values, 1.0)

    def test_continuous_girsanov(self):
        s = MarketSpec.from_theta(m=1, horizon=1.0, r=0.0, theta=[0.4], b=[[0.3]], lam=np.empty(0))
        p = simulate_path(s, 1, 0, n_steps=7)
        L = radon_nikodym_path(solve_unique_deflator(s), p, s)
        np.testing.assert_allclose(L.values, np.exp(-0.5 * 0.16 * p.times - 0.4 * p.W[:, 0]), rtol=1e-13)

    def test_jump_factor(self, elmm):
        for i in range(20):
            p = simulate_path(elmm, 3, i, n_steps=4)
            L = radon_nikodym_path(solve_unique_deflator(elmm), p, elmm)
            e = np.nonzero(p.kinds >= 0)[0]
            np.testing.assert_allclose(L.values[e] / L.left[e], 0.5, rtol=1e-12)

    def test_equals_deflator(self, rng):
        for i in range(30):
            s = random_spec(rng, n_pieces=3)
            p = simulate_path(s, 2, i, n_steps=16)
            L = radon_nikodym_path(solve_unique_deflator(s), p, s)
            Z = simulate_deflator(s, p)
            assert np.max(np.abs(L.values - Z.values) / Z.values) < 1e-10

    def test_negative_multiplier_flags_absorption(self):
        s = eye_spec([0.1, 1.2])
        p = next(simulate_path(s, 0, i) for i in range(100) if simulate_path(s, 0, i).jump_times[0].size)
        L = radon_nikodym_path(closed_form_deflator(s), p, s)
        assert L.absorbed and np.any(L.values < 0)


class TestAnalyticExpectation:
    def test_unconstrained_is_one(self, elmm):
        res = analytic_deflator_expectation(elmm)
        assert res.value == 1.0 and res.regime == "martingale"

    def test_constrained_strict(self, constrained):
        res = analytic_deflator_expectation(constrained)
        assert res.integrated_drift == pytest.approx(1.0, abs=1e-14)
        assert res.value == pytest.approx(math.exp(-1), rel=1e-14)
        assert res.value == pytest.approx(oracles.expected_deflator_constrained(1.5, 1.0, 1.0, 1.0), rel=1e-14)

    def test_binding_cap(self, binding_cap):
        res = analytic_deflator_expectation(binding_cap)
        assert res.value == pytest.approx(oracles.expected_deflator_constrained(0.6, 1.0, 0.5, 1.0), rel=1e-13)
        assert res.value < 1

    def test_partial_horizon_and_pieces(self):
        s = MarketSpec(d=2, m=1, breakpoints=[0.0, 0.4, 1.0], r=[0.0, 0.0], a=[[0.3, 1.5], [0.3, 0.2]],
                       b=[np.eye(2), np.eye(2)], lam=[[1.0], [1.0]], constraint_cap=1.0)
        # first piece binds (drift 1.0), second is slack
        assert analytic_deflator_expectation(s, 0.2).value == pytest.approx(math.exp(-0.2), rel=1e-13)
        assert analytic_deflator_expectation(s).value == pytest.approx(math.exp(-0.4), rel=1e-13)

    def test_small_cap_limit(self):
        vals = [analytic_deflator_expectation(two_asset([0.3, 1.5], cap=c)).value for c in (1e-2, 1e-4, 1e-6)]
        assert all(b > a for a, b in zip(vals, vals[1:])) and 1 - vals[-1] < 1e-5

    def test_nonexistent(self):
        with pytest.raises(NoGop):
            analytic_deflator_expectation(two_asset([0.3, 1.5]))

    def test_monotone_in_cap_when_unbounded(self):
        caps = np.linspace(0.05, 5.0, 100)
        vals = [analytic_deflator_expectation(two_asset([0.3, 1.5], cap=c)).value for c in caps]
        assert np.all(np.diff(vals) < 0)

    @pytest.mark.parametrize("theta2", [0.1, 0.3, 0.6, 0.9, -0.5])
    def test_drift_sign(self, theta2):
        thr = binding_threshold(theta2, 1.0)
        for cap in np.linspace(0.01, 4.0, 80):
            D = deflator_drift(theta2, 1.0, cap)
            D_alt = cap * (cap * (theta2 - 1.0) + theta2) / (1.0 + cap)
            assert D == pytest.approx(D_alt, abs=1e-14)
            if abs(cap - thr) > 1e-9:
                assert (D > 0) == (cap < thr)

    def test_zero_event_risk_not_binding(self):
        assert analytic_deflator_expectation(two_asset([0.3, 0.0], cap=0.5)).value == 1.0
        assert deflator_drift(0.0, 1.0, 0.5) < 0


class TestBenchmarked:
    def test_gop_is_constant(self, binding_cap):
        assert analytic_benchmarked_expectation(binding_cap, Strategy.gop(binding_cap, 2.5)) == pytest.approx(2.5)

    @pytest.mark.parametrize("fixture", ["elmm", "constrained", "binding_cap"])
    def test_cash_equals_deflator(self, fixture, request):
        s = request.getfixturevalue(fixture)
        ref = analytic_deflator_expectation(s).value
        assert analytic_benchmarked_expectation(s, Strategy.cash(s, 3.0)) == pytest.approx(3.0 * ref, rel=1e-13)

    def test_never_exceeds_initial(self, rng, constrained):
        for _ in range(200):
            pi = rng.uniform(-3, 3, size=2)
            c = pi @ constrained.b[0]
            if not -1 < c[1] <= 1:
                continue
            assert analytic_benchmarked_expectation(constrained, Strategy.constant(constrained, pi)) <= 1 + 1e-12
