from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rankmerton import ConstraintSpec, FirstOrderParams, MarketState, Preferences, RankCoefficients
from rankmerton.model import named_coefficients, rank_of, validate


class TestRankOf:
    def test_distinct(self):
        perm, y = rank_of([1.0, 3.0, 2.0])
        assert perm.tolist() == [2, 0, 1]
        assert y.tolist() == [3.0, 2.0, 1.0]

    def test_tie_goes_to_lower_index(self):
        perm, y = rank_of([2.0, 3.0, 3.0, 1.0])
        assert perm.tolist() == [2, 0, 1, 3]
        assert y.tolist() == [3.0, 3.0, 2.0, 1.0]

    def test_full_tie_is_identity(self):
        perm, y = rank_of([5.0, 5.0, 5.0])
        assert perm.tolist() == [0, 1, 2]
        assert y.tolist() == [5.0, 5.0, 5.0]

    @pytest.mark.parametrize("bad", [[1.0, 0.0], [1.0, -2.0], [np.nan, 1.0], [np.inf, 1.0]])
    def test_domain_error(self, bad):
        with pytest.raises(ValueError):
            rank_of(bad)

    def test_batched(self):
        perm, y = rank_of(np.array([[1.0, 3.0, 2.0], [4.0, 5.0, 6.0]]))
        assert perm.tolist() == [[2, 0, 1], [2, 1, 0]]
        assert y.tolist() == [[3.0, 2.0, 1.0], [6.0, 5.0, 4.0]]

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(1e-3, 1e3)))
    def test_properties(self, x):
        perm, y = rank_of(x)
        assert sorted(perm.tolist()) == list(range(x.size))
        assert np.all(np.diff(y) <= 0)
        assert np.array_equal(y[perm], x)
        # sorting is idempotent: ranking y gives the identity
        assert rank_of(y)[0].tolist() == list(range(x.size))


class TestNamedCoefficients:
    def test_rank_two_asset_first(self):
        m = FirstOrderParams([0.10, 0.02], np.eye(2), 0.0)
        mu, _ = named_coefficients(0.0, [1.0, 4.0], m)
        assert mu.tolist() == [0.02, 0.10]

    def test_identity_permutation(self):
        m = FirstOrderParams([0.10, 0.02], np.eye(2), 0.0)
        mu, _ = named_coefficients(0.0, [4.0, 1.0], m)
        assert mu.tolist() == [0.10, 0.02]

    def test_isotropic_volatility(self):
        m = FirstOrderParams([0.1, 0.05, 0.0], np.eye(3), 0.0)
        _, sigma = named_coefficients(0.0, [2.0, 7.0, 1.0], m)
        assert np.array_equal(sigma, np.eye(3))

    def test_sigma_permuted_both_ways(self):
        sig = np.array([[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.25]])
        m = FirstOrderParams([0.1, 0.05, 0.0], sig, 0.0)
        x = np.array([2.0, 7.0, 1.0])
        perm, _ = rank_of(x)
        _, sigma = named_coefficients(0.0, x, m)
        for i in range(3):
            for j in range(3):
                assert sigma[i, j] == sig[perm[i], perm[j]]

    @settings(max_examples=100, deadline=None)
    @given(st.permutations(range(4)))
    def test_equivariance(self, p):
        p = np.array(p)
        m = FirstOrderParams([0.2, 0.1, 0.05, -0.01], np.eye(4) * 0.3, 0.0)
        x = np.array([1.5, 4.0, 2.5, 0.7])
        mu, _ = named_coefficients(0.0, x, m)
        mu_p, _ = named_coefficients(0.0, x[p], m)
        assert np.array_equal(mu_p, mu[p])


class TestFirstOrderParams:
    def test_flat_sigma_reshaped(self):
        m = FirstOrderParams([0.1, 0.2], [0.2, 0.0, 0.0, 0.3], 0.01)
        assert m.sigma_tilde.shape == (2, 2)
        assert np.allclose(m.a_tilde, np.diag([0.04, 0.09]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            FirstOrderParams([0.1, 0.2], np.eye(3), 0.0)

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            FirstOrderParams([0.1, np.nan], np.eye(2), 0.0)

    def test_immutable(self):
        m = FirstOrderParams([0.1, 0.2], np.eye(2), 0.0)
        with pytest.raises(ValueError):
            m.mu_tilde[0] = 1.0

    def test_from_covariance_roundtrip(self):
        a = np.array([[0.04, 0.01], [0.01, 0.09]])
        m = FirstOrderParams.from_covariance([0.1, 0.05], a, 0.0)
        assert np.allclose(m.sigma_tilde @ m.sigma_tilde.T, a, atol=1e-15)
        assert np.array_equal(m.a_tilde, a)

    def test_rayleigh_bounded_by_min_eigenvalue(self):
        rng = np.random.default_rng(1)
        sig = np.array([[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.25]])
        m = FirstOrderParams([0.0] * 3, sig, 0.0)
        lo = validate(m).details["min_eigenvalue_a"]
        v = rng.normal(size=(1000, 3))
        q = np.einsum("ni,ij,nj->n", v, m.a_tilde, v) / np.einsum("ni,ni->n", v, v)
        assert np.all(q >= lo * (1 - 1e-12))
        assert np.allclose(m.a_tilde, m.a_tilde.T)


class TestValidate:
    def test_identity_passes(self):
        report = validate(FirstOrderParams([0.3, -0.1], np.eye(2), 0.0))
        assert report.ok and report.violations == []

    def test_zero_eigenvalue_fails_ellipticity(self):
        sig = np.array([[1.0, 1.0], [1.0, 1.0]])
        report = validate(FirstOrderParams([0.1, 0.1], sig, 0.0))
        assert not report.ok
        assert "ellipticity" in report.violations

    def test_asymmetric_flagged(self):
        sig = np.array([[0.2, 0.1], [0.0, 0.2]])
        report = validate(FirstOrderParams([0.1, 0.1], sig, 0.0))
        assert "symmetry" in report.violations

    def test_indefinite_sigma_flagged(self):
        # a = sigma sigma' is SPD but sigma itself is not
        sig = np.array([[0.2, 0.0], [0.0, -0.3]])
        report = validate(FirstOrderParams([0.1, 0.1], sig, 0.0))
        assert report.violations == ["positive_definite"]

    @staticmethod
    def _coeffs(mu_fn, **bounds):
        return RankCoefficients(2, mu_fn, lambda t, y: 0.2 * np.eye(2), **bounds)

    def test_smooth_bounded_coefficients_pass(self):
        model = self._coeffs(lambda t, y: 0.05 * np.ones_like(y), drift_bound=1.0, vol_bound=1.0,
                             ellipticity=0.01, lipschitz=1.0)
        report = validate(model)
        assert report.ok, report.violations
        assert "necessary but not sufficient" in report.note

    def test_inverse_sqrt_lipschitz_diverges_near_zero(self):
        # y * y**-0.5 = sqrt(y) has an unbounded derivative at the origin
        model = self._coeffs(lambda t, y: 1.0 / np.sqrt(y), lipschitz=10.0)
        report = validate(model)
        assert "lipschitz" in report.violations
        assert report.details["worst_lipschitz_ratio"] > 100
        assert min(report.details["worst_lipschitz_y"]) < 1e-4

    def test_sqrt_drift_flagged(self):
        model = self._coeffs(lambda t, y: np.sqrt(y), drift_bound=10.0, lipschitz=10.0)
        report = validate(model)
        assert not report.ok
        assert {"drift_bound", "lipschitz"} <= set(report.violations)

    def test_evaluator_error_reported(self):
        def boom(t, y):
            raise RuntimeError("no")
        report = validate(self._coeffs(boom))
        assert report.violations == ["evaluator"]

    def test_degenerate_volatility(self):
        model = RankCoefficients(2, lambda t, y: np.zeros(2), lambda t, y: np.ones((2, 2)))
        assert "ellipticity" in validate(model).violations


class TestSmallTypes:
    @pytest.mark.parametrize("gamma,beta,T", [(1.0, 0.1, 1.0), (0.0, 0.1, 1.0), (-1.0, 0.1, 1.0),
                                              (2.0, 0.0, 1.0), (2.0, 0.1, 0.0)])
    def test_preferences_invalid(self, gamma, beta, T):
        with pytest.raises(ValueError):
            Preferences(gamma, beta, T)

    def test_utility(self):
        p = Preferences(2.0, 0.1, 1.0)
        assert p.utility(2.0) == -0.5
        assert Preferences(0.5, 0.1, 1.0).utility(4.0) == 4.0

    def test_constraint_windows(self):
        assert ConstraintSpec.unconstrained().window(4) == slice(0, 4)
        assert ConstraintSpec.open_market(2, 3).window(4) == slice(1, 3)
        with pytest.raises(ValueError):
            ConstraintSpec.open_market(2, 5).window(4)
        with pytest.raises(ValueError):
            ConstraintSpec.open_market(3, 2)
        with pytest.raises(ValueError):
            ConstraintSpec("long_only", 1, 2)
        with pytest.raises(ValueError):
            ConstraintSpec("fully_invested")

    def test_market_state(self):
        with pytest.raises(ValueError):
            MarketState(0.0, [1.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            MarketState(0.0, [1.0, 2.0], 0.0)
        s = MarketState(0.0, [1, 2], 1.0)
        assert s.x.dtype == np.float64
