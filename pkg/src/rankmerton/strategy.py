"""Closed-form optimal consumption-investment for first-order models.

For power utility the value function is ``f(t)**gamma * w**(1-gamma)/(1-gamma)``
where ``f`` solves the linear ODE ``f' + (kappa/gamma) f + exp(-beta t/gamma) = 0``
with ``f(T) = 1``.  The three constraint regimes differ only in the per-rank
weights and the growth constant ``kappa``:

=================  =================================  ===================
regime             weights (nonzero block)            kappa
=================  =================================  ===================
unconstrained      a^-1 (mu - r) / gamma               nu
open market        a_w^-1 (mu_w - r) / gamma           nu on the window
fully invested     a_w^-1 (mu_w + lam) / gamma         zeta
=================  =================================  ===================

where ``_w`` is truncation to the rank window ``[n, N]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from .model import ConstraintSpec, FirstOrderParams, Preferences, rank_of

Array = NDArray[np.float64]

LIMIT_SWITCH = 1e-8


def _check_t(t, prefs: Preferences):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > prefs.horizon_T):
        raise ValueError(f"t must lie in [0, {prefs.horizon_T}]")
    return t_arr


def _f(t, kappa: float, prefs: Preferences):
    # no domain check: used for finite differences at the grid ends
    g, beta, T = prefs.gamma, prefs.beta, prefs.horizon_T
    t = np.asarray(t, dtype=np.float64)
    delta = kappa - beta
    tau = T - t
    if abs(delta) < LIMIT_SWITCH:
        integral = tau * np.exp(-beta * t / g)
    else:
        # gamma/delta * e^{-kappa t/g} (e^{delta T/g} - e^{delta t/g}), written with expm1
        integral = g * np.exp(-beta * t / g) * np.expm1(delta * tau / g) / delta
    return np.exp(kappa * tau / g) + integral


def f_eval(t, kappa: float, prefs: Preferences):
    """Consumption-adjusted growth factor ``f(t; kappa)`` on ``[0, T]``.

    For ``|kappa - beta| < 1e-8`` the limiting form
    ``exp(beta (T-t)/gamma) + (T-t) exp(-beta t/gamma)`` is used.
    """
    return _f(_check_t(t, prefs), kappa, prefs)


def _solve_spd(a: Array, b: Array) -> Array:
    return linalg.cho_solve(linalg.cho_factor(a, lower=True), b)


def _window(model: FirstOrderParams, n: int, N: int) -> tuple[Array, Array]:
    w = ConstraintSpec.open_market(n, N).window(model.d)
    return model.mu_tilde[w], model.a_tilde[w, w]


def _nu(mu: Array, a: Array, r: float, gamma: float) -> float:
    excess = mu - r
    return (1 - gamma) * (r + excess @ _solve_spd(a, excess) / (2 * gamma))


def merton_fraction_unconstrained(model: FirstOrderParams, prefs: Preferences) -> Array:
    """Per-rank Merton weights ``a^-1 (mu - r 1) / gamma``."""
    return _solve_spd(model.a_tilde, model.mu_tilde - model.r) / prefs.gamma


def nu_unconstrained(model: FirstOrderParams, prefs: Preferences) -> float:
    return _nu(model.mu_tilde, model.a_tilde, model.r, prefs.gamma)


def open_market_fraction(model: FirstOrderParams, prefs: Preferences, n: int, N: int) -> Array:
    """Merton weights on ranks ``n..N`` (1-based, inclusive), zero elsewhere."""
    mu, a = _window(model, n, N)
    out = np.zeros(model.d)
    out[n - 1:N] = _solve_spd(a, mu - model.r) / prefs.gamma
    return out


def nu_open(model: FirstOrderParams, prefs: Preferences, n: int, N: int) -> float:
    mu, a = _window(model, n, N)
    return _nu(mu, a, model.r, prefs.gamma)


def _fully_invested_parts(model, prefs, n, N):
    mu, a = _window(model, n, N)
    fac = linalg.cho_factor(a, lower=True)
    ones = np.ones(mu.size)
    a_inv_mu = linalg.cho_solve(fac, mu)
    a_inv_one = linalg.cho_solve(fac, ones)
    lam = (prefs.gamma - ones @ a_inv_mu) / (ones @ a_inv_one)
    eta = (a_inv_mu + lam * a_inv_one) / prefs.gamma
    return mu, a, fac, lam, eta


def fully_invested_fraction(model: FirstOrderParams, prefs: Preferences, n: int, N: int) -> Array:
    """Mean-variance weights on ranks ``n..N`` constrained to sum to one.

    Solves ``max eta.mu - gamma/2 eta' a eta`` s.t. ``sum(eta) = 1``; the
    Lagrange multiplier is ``lam = (gamma - 1'a^-1 mu) / (1'a^-1 1)``.
    """
    *_, eta = _fully_invested_parts(model, prefs, n, N)
    out = np.zeros(model.d)
    out[n - 1:N] = eta
    return out


def zeta_fully_invested(model: FirstOrderParams, prefs: Preferences, n: int, N: int) -> float:
    """Growth constant of the fully invested problem.

    Computed as ``(1-g)/(2g) (mu - lam)' a^-1 (mu + lam)`` and checked against
    ``(1-g) (eta.mu - g/2 eta' a eta)``.
    """
    g = prefs.gamma
    mu, a, fac, lam, eta = _fully_invested_parts(model, prefs, n, N)
    zeta = (1 - g) / (2 * g) * (mu - lam) @ linalg.cho_solve(fac, mu + lam)
    check = (1 - g) * (eta @ mu - 0.5 * g * eta @ a @ eta)
    if abs(zeta - check) > 1e-10 * max(1.0, abs(zeta)):
        raise ArithmeticError(f"zeta formulas disagree: {zeta!r} vs {check!r}")
    return float(zeta)


@dataclass(frozen=True, eq=False)
class ClosedFormSolution:
    """Optimal per-rank weights and growth constant for one regime."""

    constraint: ConstraintSpec
    pi_tilde_star: Array
    rate_kappa: float
    prefs: Preferences

    def f(self, t):
        return f_eval(t, self.rate_kappa, self.prefs)

    def value(self, t, w):
        return value_closed_form(t, w, self)

    def consumption(self, t, w):
        return consumption_rate(t, w, self)

    def to_dict(self) -> dict:
        return {"constraint": self.constraint.to_dict(),
                "pi_tilde_star": self.pi_tilde_star.tolist(),
                "kappa": self.rate_kappa}


def solve(model: FirstOrderParams, prefs: Preferences,
          constraint: ConstraintSpec | None = None) -> ClosedFormSolution:
    """Closed-form solution for the given constraint regime."""
    constraint = constraint or ConstraintSpec.unconstrained()
    constraint.window(model.d)
    if constraint.kind == "unconstrained":
        pi = merton_fraction_unconstrained(model, prefs)
        kappa = nu_unconstrained(model, prefs)
    elif constraint.kind == "open_market":
        pi = open_market_fraction(model, prefs, constraint.n, constraint.N)
        kappa = nu_open(model, prefs, constraint.n, constraint.N)
    else:
        pi = fully_invested_fraction(model, prefs, constraint.n, constraint.N)
        kappa = zeta_fully_invested(model, prefs, constraint.n, constraint.N)
    pi.flags.writeable = False
    return ClosedFormSolution(constraint, pi, float(kappa), prefs)


def consumption_rate(t, w, solution: ClosedFormSolution):
    """Optimal consumption ``exp(-beta t/gamma) * w / f(t)``.

    This is the first-order condition ``exp(-beta t) c**-gamma = dv/dw``
    applied to the value function.
    """
    prefs = solution.prefs
    t = _check_t(t, prefs)
    f = _f(t, solution.rate_kappa, prefs)
    if np.any(f <= 0):
        raise ArithmeticError("f must be positive on [0, T]")
    return np.exp(-prefs.beta * t / prefs.gamma) * np.asarray(w) / f


def value_closed_form(t, w, solution: ClosedFormSolution):
    prefs = solution.prefs
    f = f_eval(t, solution.rate_kappa, prefs)
    return f ** prefs.gamma * np.power(w, 1.0 - prefs.gamma) / (1.0 - prefs.gamma)


def feedback_strategy(solution: ClosedFormSolution):
    """Vectorized feedback rule ``(t, x, w) -> (named weights, consumption)``.

    Asset ``i`` gets the weight of the rank it currently occupies.
    """
    pi_tilde = solution.pi_tilde_star

    def strategy(t, x, w):
        perm, _ = rank_of(x)
        return pi_tilde[perm], consumption_rate(t, w, solution)

    return strategy
