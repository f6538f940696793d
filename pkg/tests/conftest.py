from __future__ import annotations

import numpy as np
import pytest

from rankmerton import ConstraintSpec, FirstOrderParams, Preferences


@pytest.fixture
def three_rank():
    """d=3 market with distinct per-rank drifts and isotropic volatility."""
    return FirstOrderParams([0.09, 0.05, 0.01], 0.2 * np.eye(3), 0.02)


@pytest.fixture
def prefs():
    return Preferences(gamma=2.0, beta=0.1, horizon_T=1.0)


REGIMES = [
    ConstraintSpec.unconstrained(),
    ConstraintSpec.open_market(1, 2),
    ConstraintSpec.fully_invested(1, 2),
]


def random_spd(rng, d, scale=0.05):
    m = rng.normal(size=(d, d))
    return scale * (m @ m.T / d + 0.5 * np.eye(d))


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
