"""
Optimal weights under three constraint regimes
----------------------------------------------

A three-rank market where the largest stock drifts fastest.  We compare the
unconstrained Merton weights with an investor restricted to the top two
ranks, and with one who must also stay fully invested in them.
"""

import numpy as np

from rankmerton import ConstraintSpec, FirstOrderParams, Preferences, solve

model = FirstOrderParams(mu_tilde=[0.09, 0.05, 0.01], sigma_tilde=0.2 * np.eye(3), r=0.02)
prefs = Preferences(gamma=2.0, beta=0.1, horizon_T=1.0)

regimes = {
    "unconstrained": ConstraintSpec.unconstrained(),
    "top two only": ConstraintSpec.open_market(1, 2),
    "top two, fully invested": ConstraintSpec.fully_invested(1, 2),
}

###############################################################################
# Per-rank weights and the growth constant kappa.  Restricting the window
# drops the short position in rank 3; full investment pulls the weights down
# until they sum to one.

for name, constraint in regimes.items():
    sol = solve(model, prefs, constraint)
    print(f"{name:>24}: weights {np.round(sol.pi_tilde_star, 4)}, kappa {sol.rate_kappa:+.6f}, "
          f"value {sol.value(0.0, 1.0):.5f}")

###############################################################################
# The factor f(t) drives both the value and the consumption rate
# c = exp(-beta t / gamma) w / f(t).  Consumption rises toward the horizon as
# the remaining lifetime shrinks.

sol = solve(model, prefs, regimes["unconstrained"])
t = np.linspace(0.0, 1.0, 6)
for ti, fi, ci in zip(t, sol.f(t), sol.consumption(t, 1.0)):
    print(f"t={ti:.1f}  f={fi:.4f}  c(w=1)={ci:.4f}")
