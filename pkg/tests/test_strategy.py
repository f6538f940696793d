from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import REGIMES, random_spd
from rankmerton import ClosedFormSolution, ConstraintSpec, FirstOrderParams, Preferences
from rankmerton.strategy import (
    consumption_rate,
    f_eval,
    feedback_strategy,
    fully_invested_fraction,
    merton_fraction_unconstrained,
    nu_open,
    nu_unconstrained,
    open_market_fraction,
    solve,
    value_closed_form,
    zeta_fully_invested,
)


def f_quadrature(t, kappa, prefs):
    g, beta, T = prefs.gamma, prefs.beta, prefs.horizon_T
    val, _ = integrate.quad(lambda s: np.exp(kappa / g * (s - t) - beta * s / g), t, T,
                            epsabs=1e-14, epsrel=1e-13)
    return np.exp(kappa / g * (T - t)) + val


class TestF:
    @pytest.mark.parametrize("kappa", [-0.1, 0.0, 0.05, 0.1, 0.3])
    def test_terminal_value(self, kappa):
        assert f_eval(1.0, kappa, Preferences(2.0, 0.1, 1.0)) == 1.0

    def test_quadrature_oracle(self):
        p = Preferences(2.0, 0.1, 1.0)
        assert f_eval(0.0, 0.05, p) == pytest.approx(f_quadrature(0.0, 0.05, p), abs=1e-8)

    @pytest.mark.parametrize("delta", [0.0, 1e-9, -5e-9, 2e-8, 1e-6])
    def test_limit_branch_continuous(self, delta):
        p = Preferences(2.0, 0.1, 1.0)
        for t in (0.0, 0.3, 0.9):
            # the limit form drops an O(|kappa - beta|) term
            assert f_eval(t, 0.1 + delta, p) == pytest.approx(f_quadrature(t, 0.1 + delta, p),
                                                              abs=1e-8)

    def test_decreasing_in_beta_and_positive(self):
        t = np.linspace(0, 1, 50)[:-1]
        prev = None
        for beta in (0.05, 0.1, 0.5, 2.0, 20.0):
            f = f_eval(t, 0.0, Preferences(2.0, beta, 1.0))
            assert np.all(f > 0)
            if prev is not None:
                assert np.all(f < prev)
            prev = f
        # consumption term suppressed for very impatient investors
        assert f_eval(0.0, 0.0, Preferences(2.0, 1e4, 1.0)) == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("t", [-0.1, 1.1])
    def test_domain(self, t):
        with pytest.raises(ValueError):
            f_eval(t, 0.0, Preferences(2.0, 0.1, 1.0))


class TestUnconstrained:
    def test_nu_zero_excess(self):
        m = FirstOrderParams([0.03, 0.03], 0.2 * np.eye(2), 0.03)
        assert nu_unconstrained(m, Preferences(2.0, 0.1, 1.0)) == pytest.approx(-0.03, abs=1e-16)
        assert np.array_equal(merton_fraction_unconstrained(m, Preferences(2.0, 0.1, 1.0)), [0, 0])

    def test_nu_all_zero(self):
        m = FirstOrderParams([0.0, 0.0], np.eye(2), 0.0)
        assert nu_unconstrained(m, Preferences(3.0, 0.1, 1.0)) == 0.0

    def test_nu_identity_covariance(self):
        m = FirstOrderParams([0.12, 0.07], np.eye(2), 0.02)
        assert nu_unconstrained(m, Preferences(2.0, 0.1, 1.0)) == pytest.approx(-0.023125, abs=1e-15)

    def test_merton_identity(self):
        m = FirstOrderParams([0.12, 0.07], np.eye(2), 0.02)
        pi = merton_fraction_unconstrained(m, Preferences(2.0, 0.1, 1.0))
        assert pi == pytest.approx([0.05, 0.025], abs=1e-15)

    def test_merton_cramer(self):
        # det = 0.0035; pi = adj(a) (0.06, 0.03) / (det * 1.5) = (34/35, 4/35)
        a = np.array([[0.04, 0.01], [0.01, 0.09]])
        m = FirstOrderParams.from_covariance([0.08, 0.05], a, 0.02)
        pi = merton_fraction_unconstrained(m, Preferences(1.5, 0.1, 1.0))
        assert pi == pytest.approx([34 / 35, 4 / 35], abs=1e-10)
        assert 1.5 * a @ pi == pytest.approx([0.06, 0.03], abs=1e-12)


class TestOpenMarket:
    def test_single_rank(self):
        rng = np.random.default_rng(3)
        a = random_spd(rng, 4)
        m = FirstOrderParams.from_covariance([0.1, 0.07, 0.05, 0.02], a, 0.01)
        p = Preferences(2.5, 0.1, 1.0)
        pi = open_market_fraction(m, p, 3, 3)
        assert pi[2] == pytest.approx((0.05 - 0.01) / (2.5 * a[2, 2]), rel=1e-14)
        assert pi[[0, 1, 3]].tolist() == [0.0, 0.0, 0.0]

    def test_full_window_is_unconstrained(self, three_rank, prefs):
        assert np.allclose(open_market_fraction(three_rank, prefs, 1, 3),
                           merton_fraction_unconstrained(three_rank, prefs), rtol=0, atol=1e-15)
        assert nu_open(three_rank, prefs, 1, 3) == pytest.approx(
            nu_unconstrained(three_rank, prefs), abs=1e-16)

    def test_diagonal_oracle(self):
        m = FirstOrderParams.from_covariance([0.10, 0.06, 0.12], np.diag([0.04, 0.04, 0.09]), 0.02)
        p = Preferences(2.0, 0.1, 1.0)
        assert open_market_fraction(m, p, 1, 2) == pytest.approx([1.0, 0.5, 0.0], abs=1e-14)
        # (1 - 2)(0.02 + (0.16 + 0.04) / 4)
        assert nu_open(m, p, 1, 2) == pytest.approx(-0.07, abs=1e-15)

    def test_nu_zero_window_excess(self):
        m = FirstOrderParams([0.5, 0.02, 0.02], 0.2 * np.eye(3), 0.02)
        assert nu_open(m, Preferences(3.0, 0.1, 1.0), 2, 3) == pytest.approx(-0.04, abs=1e-16)


class TestFullyInvested:
    def test_single_rank(self, three_rank, prefs):
        assert fully_invested_fraction(three_rank, prefs, 2, 2).tolist() == [0.0, 1.0, 0.0]
        assert zeta_fully_invested(three_rank, prefs, 2, 2) == pytest.approx(
            (1 - 2.0) * (0.05 - 2.0 * 0.04 / 2), abs=1e-15)

    def test_symmetric_window(self):
        m = FirstOrderParams([0.2, 0.07, 0.07, 0.07], 0.3 * np.eye(4), 0.01)
        p = Preferences(2.0, 0.1, 1.0)
        eta = fully_invested_fraction(m, p, 2, 4)
        assert np.abs(eta[1:] - 1 / 3).max() <= 1e-12 and eta[0] == 0.0
        assert zeta_fully_invested(m, p, 2, 4) == pytest.approx(
            (1 - 2.0) * (0.07 - 2.0 * 0.09 / (2 * 3)), abs=1e-14)

    def test_kkt_oracle(self):
        # lambda = -3/325, eta = (23/26, 3/26)
        m = FirstOrderParams.from_covariance([0.08, 0.03], np.diag([0.04, 0.09]), 0.0)
        p = Preferences(2.0, 0.1, 1.0)
        eta = fully_invested_fraction(m, p, 1, 2)
        assert eta == pytest.approx([23 / 26, 3 / 26], abs=1e-14)
        stat = 2.0 * m.a_tilde @ eta - m.mu_tilde
        assert np.ptp(stat) < 1e-12

    def test_dual_formulas_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            d = int(rng.integers(2, 6))
            m = FirstOrderParams.from_covariance(rng.normal(0.05, 0.05, d), random_spd(rng, d), 0.01)
            p = Preferences(float(rng.uniform(0.3, 6)), 0.1, 1.0)
            # raises if the two expressions disagree beyond 1e-10
            zeta_fully_invested(m, p, 1, d)

    def test_reproduces_unconstrained_when_it_sums_to_one(self):
        rng = np.random.default_rng(5)
        a = random_spd(rng, 3)
        target = np.array([0.5, 0.3, 0.2])
        gamma, r = 3.0, 0.015
        m = FirstOrderParams.from_covariance(gamma * a @ target + r, a, r)
        p = Preferences(gamma, 0.1, 1.0)
        assert merton_fraction_unconstrained(m, p) == pytest.approx(target, abs=1e-12)
        assert fully_invested_fraction(m, p, 1, 3) == pytest.approx(target, abs=1e-12)


class TestSolution:
    def test_zero_outside_window(self, three_rank, prefs):
        sol = solve(three_rank, prefs, ConstraintSpec.open_market(1, 2))
        assert sol.pi_tilde_star[2] == 0.0

    @pytest.mark.parametrize("constraint", REGIMES, ids=lambda c: c.kind)
    def test_criterion_model_values(self, three_rank, prefs, constraint):
        expected = {"unconstrained": ([0.875, 0.375, -0.125], -0.056875),
                    "open_market": ([0.875, 0.375, 0.0], -0.05625),
                    "fully_invested": ([0.75, 0.25, 0.0], -0.055)}[constraint.kind]
        sol = solve(three_rank, prefs, constraint)
        assert sol.pi_tilde_star == pytest.approx(expected[0], abs=1e-13)
        assert sol.rate_kappa == pytest.approx(expected[1], abs=1e-15)

    def test_window_outside_market(self, three_rank, prefs):
        with pytest.raises(ValueError):
            solve(three_rank, prefs, ConstraintSpec.open_market(2, 4))

    def test_consumption_terminal(self, three_rank, prefs):
        sol = solve(three_rank, prefs)
        assert consumption_rate(1.0, 2.0, sol) == pytest.approx(np.exp(-0.1 / 2) * 2.0, rel=1e-15)

    def test_consumption_homogeneous(self, three_rank, prefs):
        sol = solve(three_rank, prefs)
        c1, c2 = consumption_rate(0.3, 1.0, sol), consumption_rate(0.3, 2.0, sol)
        assert c2 == pytest.approx(2 * c1, rel=1e-15)
        assert np.all(np.diff(consumption_rate(0.3, np.linspace(0.1, 5, 20), sol)) > 0)

    def test_consumption_quadrature_oracle(self):
        p = Preferences(2.0, 0.1, 1.0)
        sol = ClosedFormSolution(ConstraintSpec.unconstrained(), np.zeros(1), 0.05, p)
        expected = np.exp(-0.1 * 0.5 / 2) / f_quadrature(0.5, 0.05, p)
        assert consumption_rate(0.5, 1.0, sol) == pytest.approx(expected, rel=1e-8)

    def test_consumption_first_order_condition(self, three_rank, prefs):
        sol = solve(three_rank, prefs)
        t, w, h = 0.4, 1.7, 1e-6
        dv_dw = (value_closed_form(t, w + h, sol) - value_closed_form(t, w - h, sol)) / (2 * h)
        c = consumption_rate(t, w, sol)
        assert np.exp(-prefs.beta * t) * c ** -prefs.gamma == pytest.approx(dv_dw, rel=1e-8)

    @pytest.mark.parametrize("gamma", [0.5, 2.0, 5.0])
    def test_value_terminal_and_sign(self, three_rank, gamma):
        p = Preferences(gamma, 0.1, 1.0)
        sol = solve(three_rank, p)
        w = np.array([0.1, 1.0, 10.0])
        assert np.array_equal(value_closed_form(1.0, w, sol), p.utility(w))
        v = value_closed_form(0.2, w, sol)
        assert np.all(v > 0) if gamma < 1 else np.all(v < 0)
        assert np.all(np.diff(value_closed_form(0.2, np.linspace(0.1, 10, 40), sol)) > 0)

    def test_value_increasing_in_kappa_for_low_gamma(self):
        p = Preferences(0.5, 0.1, 1.0)
        vals = [value_closed_form(0.0, 1.0, ClosedFormSolution(ConstraintSpec(), np.zeros(1), k, p))
                for k in np.linspace(-0.2, 0.3, 11)]
        assert np.all(np.diff(vals) > 0)


class TestFeedback:
    def _sol(self, pi):
        return ClosedFormSolution(ConstraintSpec(), np.array(pi), -0.05, Preferences(2.0, 0.1, 1.0))

    def test_permutation(self):
        pi, _ = feedback_strategy(self._sol([0.6, 0.2]))(0.0, np.array([1.0, 4.0]), 1.0)
        assert pi.tolist() == [0.2, 0.6]

    def test_identity_when_ordered(self):
        pi, _ = feedback_strategy(self._sol([0.6, 0.2, 0.1]))(0.0, np.array([5.0, 4.0, 1.0]), 1.0)
        assert pi.tolist() == [0.6, 0.2, 0.1]

    def test_vectorized(self):
        strat = feedback_strategy(self._sol([0.6, 0.2]))
        pi, c = strat(0.0, np.array([[1.0, 4.0], [4.0, 1.0]]), np.array([1.0, 2.0]))
        assert pi.tolist() == [[0.2, 0.6], [0.6, 0.2]]
        assert c[1] == pytest.approx(2 * c[0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 100), min_size=3, max_size=3))
    def test_sum_invariant(self, x):
        pi, _ = feedback_strategy(self._sol([0.6, 0.2, -0.3]))(0.0, np.array(x), 1.0)
        assert pi.sum() == pytest.approx(0.5, abs=1e-15)
