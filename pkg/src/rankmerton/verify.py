"""Numerical checks that the closed-form controls are optimal.

* :func:`mc_value` - Monte Carlo estimate of the expected discounted
  utility of a feedback strategy.
* :func:`hjb_residual` - residual of the ranked HJB equation for a
  y-independent candidate ``f**gamma w**(1-gamma)/(1-gamma)``.
* :func:`neumann_check` - normal derivative of a candidate on the faces of
  the ordered cone.
* :func:`optimality_gap` - paired (common random numbers) comparison of the
  optimal strategy against perturbed ones.
* :func:`rank_invariance_check` - value under permuted initial markets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import optimize

from .dynamics import SimConfig, Strategy, iter_blocks, model_hash, wealth_path
from .model import ConstraintSpec, FirstOrderParams, MarketState, Model, Preferences, rank_of
from .strategy import ClosedFormSolution, _f, consumption_rate, feedback_strategy, solve

Array = NDArray[np.float64]

INADMISSIBLE_LIMIT = 1e-3
FD_STEP = 1e-5


@dataclass
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_inadmissible: int = 0
    fingerprint: dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        return self.n_inadmissible <= INADMISSIBLE_LIMIT * self.n_paths

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "n_inadmissible": self.n_inadmissible, "reliable": self.reliable}


def _payoff(wp, prefs: Preferences, h: float) -> Array:
    with np.errstate(divide="ignore"):
        running = np.exp(-prefs.beta * wp.times) * prefs.utility(wp.c)
    integral = 0.5 * h * (running[:, 1:] + running[:, :-1]).sum(axis=1)
    return integral + prefs.utility(wp.V[:, -1])


def _check_state(state: MarketState, config: SimConfig):
    if config.t0 != state.t:
        raise ValueError(f"config.t0={config.t0} does not match state.t={state.t}")
    if config.record != "full":
        raise ValueError("value estimation needs record='full'")


def path_payoffs(model: Model, strategies: Sequence[Strategy], state: MarketState,
                 config: SimConfig, prefs: Preferences) -> tuple[Array, NDArray[np.bool_]]:
    """Per-path payoffs of several strategies on shared paths.

    Returns ``(J, ok)`` of shape ``(n_strategies, n_paths)``; ``ok`` is False
    where the wealth went nonpositive.
    """
    _check_state(state, config)
    J, ok = [], []
    for bundle in iter_blocks(model, state.x, config):
        rows, masks = [], []
        for strat in strategies:
            wp = wealth_path(bundle, strat, state.w)
            rows.append(_payoff(wp, prefs, bundle.h))
            masks.append(wp.admissible)
        J.append(np.stack(rows))
        ok.append(np.stack(masks))
    return np.concatenate(J, axis=1), np.concatenate(ok, axis=1)


def _summarize(values: Array) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def mc_value(model: Model, strategy: Strategy, state: MarketState, config: SimConfig,
             prefs: Preferences) -> ValueEstimate:
    """Estimate ``E[int e^{-beta s} U(c) ds + U(V_T)]`` by simulation.

    The running utility is integrated with the trapezoidal rule on the
    simulation grid.  Inadmissible paths are dropped and counted.
    """
    J, ok = path_payoffs(model, [strategy], state, config, prefs)
    mean, se = _summarize(J[0][ok[0]])
    fp = {"sim": config.fingerprint(), "model_hash": model_hash(model)}
    return ValueEstimate(mean, se, config.n_paths, int((~ok[0]).sum()), fp)


@dataclass
class ResidualReport:
    t_grid: Array
    w_grid: Array
    max_interior: float
    max_abs_interior: float
    argmax: tuple[float, float]
    max_boundary_normal: float
    terminal_error: float

    def to_dict(self) -> dict:
        return {"n_t": int(self.t_grid.size), "n_w": int(self.w_grid.size),
                "max_interior": self.max_interior, "max_abs_interior": self.max_abs_interior,
                "argmax": list(self.argmax), "max_boundary_normal": self.max_boundary_normal,
                "terminal_error": self.terminal_error}


def _hamiltonian_parts(solution, model, f, fprime, t, w, pi_tilde):
    """``(dv/dt, sup H)`` for the candidate ``f**g w**(1-g)/(1-g)``."""
    prefs = solution.prefs
    g, beta, r = prefs.gamma, prefs.beta, model.r
    w1 = np.power(w, 1 - g)
    v_t = g * f ** (g - 1) * fprime * w1 / (1 - g)
    v_w = f ** g * np.power(w, -g)
    v_ww = -g * f ** g * np.power(w, -g - 1)
    # consumption from the first-order condition against this candidate
    c = np.exp(-beta * t / g) * w / f
    excess = pi_tilde @ (model.mu_tilde - r)
    quad = pi_tilde @ model.a_tilde @ pi_tilde
    H = (w * v_w * (r + excess) + 0.5 * w ** 2 * v_ww * quad
         - v_w * c + np.exp(-beta * t) * prefs.utility(c))
    return v_t, H


def hjb_residual(solution: ClosedFormSolution, model: FirstOrderParams,
                 t_grid: Array | None = None, w_grid: Array | None = None,
                 f: Callable[[Array], Array] | None = None) -> ResidualReport:
    """HJB residual of a y-independent candidate on a ``(t, w)`` grid.

    The candidate is ``f(t)**gamma w**(1-gamma)/(1-gamma)`` with ``f``
    defaulting to the closed form; ``f'`` is a central difference.  The
    supremum uses the closed-form maximizers.  The interior residual is
    reported relative to ``|dv/dt|``.  ``t = T`` is excluded from the grid and
    checked separately through the terminal condition.
    """
    prefs = solution.prefs
    T = prefs.horizon_T
    if t_grid is None:
        t_grid = np.linspace(0.0, T, 52)[1:-1]
    if w_grid is None:
        w_grid = np.geomspace(0.1, 10.0, 50)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    w_grid = np.asarray(w_grid, dtype=np.float64)
    if np.any(t_grid >= T) or np.any(t_grid < 0) or np.any(w_grid <= 0):
        raise ValueError("grid must lie inside [0, T) x (0, inf)")
    if f is None:
        def f(t):
            return _f(t, solution.rate_kappa, prefs)
    tt, ww = np.meshgrid(t_grid, w_grid, indexing="ij")
    fv = f(tt)
    fp = (f(tt + FD_STEP) - f(tt - FD_STEP)) / (2 * FD_STEP)
    v_t, H = _hamiltonian_parts(solution, model, fv, fp, tt, ww, solution.pi_tilde_star)
    res = v_t + H
    rel = np.abs(res) / np.abs(v_t)
    i, j = np.unravel_index(np.argmax(rel), rel.shape)

    def candidate(t, y, w):
        return f(t) ** prefs.gamma * np.power(w, 1 - prefs.gamma) / (1 - prefs.gamma)

    boundary = neumann_check(candidate, boundary_samples(model.d, T, n=20))
    w_test = np.array([0.1, 1.0, 10.0])
    terminal = float(np.max(np.abs(candidate(T, None, w_test) - prefs.utility(w_test))))
    return ResidualReport(t_grid, w_grid, float(rel[i, j]), float(np.abs(res).max()),
                          (float(tt[i, j]), float(ww[i, j])), boundary, terminal)


def maximizer_crosscheck(solution: ClosedFormSolution, model: FirstOrderParams,
                         n_nodes: int = 10, seed: int = 0) -> float:
    """Compare the closed-form supremum of the Hamiltonian with a numeric one.

    At random ``(t, w)`` nodes, the investment part is maximized over the
    constraint set by a coarse grid in a box followed by Nelder-Mead, and
    consumption by bounded scalar search.  Returns the largest relative gap
    between the numeric and closed-form suprema (positive if numerics win).
    """
    prefs = solution.prefs
    g, T = prefs.gamma, prefs.horizon_T
    rng = np.random.default_rng(seed)
    d = model.d
    cons = solution.constraint
    win = cons.window(d)
    m = win.stop - win.start
    if cons.kind == "fully_invested":
        base = np.zeros(m)
        base[:] = 1.0 / m
        basis = np.linalg.svd(np.ones((1, m)))[2][1:].T
    else:
        base = np.zeros(m)
        basis = np.eye(m)

    def embed(z):
        pi = np.zeros(d)
        pi[win] = base + basis @ z
        return pi

    worst = -np.inf
    for _ in range(n_nodes):
        t = rng.uniform(0, 0.95 * T)
        w = float(np.exp(rng.uniform(np.log(0.1), np.log(10))))
        fv = _f(t, solution.rate_kappa, prefs)
        fp = (_f(t + FD_STEP, solution.rate_kappa, prefs)
              - _f(t - FD_STEP, solution.rate_kappa, prefs)) / (2 * FD_STEP)
        _, H_closed = _hamiltonian_parts(solution, model, fv, fp, t, w, solution.pi_tilde_star)

        v_w = fv ** g * w ** -g
        v_ww = -g * fv ** g * w ** (-g - 1)

        def neg_invest(z):
            pi = embed(z)
            return -(w * v_w * (model.r + pi @ (model.mu_tilde - model.r))
                     + 0.5 * w ** 2 * v_ww * pi @ model.a_tilde @ pi)

        k = basis.shape[1]
        if k == 0:
            best_z = np.zeros(0)
        else:
            axes = [np.linspace(-4.0, 4.0, 17)] * k if k <= 3 else None
            if axes is not None:
                cand = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)
            else:
                cand = rng.uniform(-4, 4, size=(4000, k))
            best_z = cand[np.argmin([neg_invest(z) for z in cand])]
            best_z = optimize.minimize(neg_invest, best_z, method="Nelder-Mead",
                                       options={"xatol": 1e-12, "fatol": 1e-15,
                                                "maxiter": 20000, "maxfev": 40000}).x

        def neg_consume(c):
            return -(-v_w * c + np.exp(-prefs.beta * t) * prefs.utility(c))

        c_res = optimize.minimize_scalar(neg_consume, bounds=(1e-9, 100 * w), method="bounded",
                                         options={"xatol": 1e-12})
        H_num = -neg_invest(best_z) - c_res.fun
        worst = max(worst, (H_num - H_closed) / abs(H_closed))
    return float(worst)


def boundary_samples(d: int, T: float, n: int = 20, seed: int = 0) -> list[tuple[float, Array, float]]:
    """Points ``(t, y, w)`` on faces of the ordered cone, one tie per sample."""
    rng = np.random.default_rng(seed)
    out = []
    if d < 2:
        return out
    for i in range(n):
        y = -np.sort(-np.exp(rng.normal(size=d)))
        k = i % (d - 1)
        y[k + 1] = y[k]
        y = -np.sort(-y)
        out.append((float(rng.uniform(0, T)), y, float(np.exp(rng.normal()))))
    return out


def neumann_check(candidate: Callable, samples: Sequence[tuple[float, Array, float]],
                  step: float = 1e-6) -> float:
    """Largest ``|grad_y v . (e_k - e_{k+1})|`` over tied pairs in ``samples``.

    Central differences along each adjacent-pair normal where ``y_k = y_{k+1}``.
    A candidate that ignores ``y`` gives exactly zero.
    """
    worst = 0.0
    for t, y, w in samples:
        y = np.asarray(y, dtype=np.float64)
        ties = np.flatnonzero(np.abs(y[:-1] - y[1:]) <= 1e-12 * np.abs(y[:-1]))
        if ties.size == 0:
            raise ValueError(f"sample y={y.tolist()} is not on the cone boundary")
        for k in ties:
            n = np.zeros_like(y)
            n[k], n[k + 1] = 1.0, -1.0
            deriv = (candidate(t, y + step * n, w) - candidate(t, y - step * n, w)) / (2 * step)
            worst = max(worst, float(np.abs(deriv)))
    return worst


@dataclass
class Perturbation:
    label: str
    weight_scale: float = 1.0
    consumption_scale: float = 1.0
    shift: Array | None = None


def perturbed_weights(solution: ClosedFormSolution, p: Perturbation) -> Array:
    """Per-rank weights of a perturbed strategy, kept inside the constraint set.

    Under the fully invested constraint the scale acts on the deviation from
    equal weights, so the weights still sum to one.
    """
    pi = solution.pi_tilde_star.copy()
    win = solution.constraint.window(pi.size)
    if solution.constraint.kind == "fully_invested":
        m = win.stop - win.start
        center = np.zeros_like(pi)
        center[win] = 1.0 / m
        pi = center + p.weight_scale * (pi - center)
    else:
        pi = p.weight_scale * pi
    if p.shift is not None:
        pi = pi + np.asarray(p.shift, dtype=np.float64)
    return pi


def default_perturbations(solution: ClosedFormSolution, n_random: int = 4, size: float = 0.3,
                          seed: int = 0) -> list[Perturbation]:
    """Weight scales 0, 0.5, 1.5, 2; consumption scales 0.5, 1.5; random shifts.

    Shifts are random directions of norm ``size`` in the tangent space of the
    constraint (zero outside the window, summing to zero when fully invested).
    """
    out = [Perturbation(f"weights x{s:g}", weight_scale=s) for s in (0.0, 0.5, 1.5, 2.0)]
    out += [Perturbation(f"consumption x{s:g}", consumption_scale=s) for s in (0.5, 1.5)]
    rng = np.random.default_rng(seed)
    d = solution.pi_tilde_star.size
    win = solution.constraint.window(d)
    for i in range(n_random):
        z = np.zeros(d)
        z[win] = rng.normal(size=win.stop - win.start)
        if solution.constraint.kind == "fully_invested":
            z[win] -= z[win].mean()
        norm = np.linalg.norm(z)
        if norm > 0:
            z *= size / norm
        out.append(Perturbation(f"shift #{i + 1}", shift=z))
    return out


def _perturbed_strategy(solution: ClosedFormSolution, p: Perturbation) -> Strategy:
    pi_tilde = perturbed_weights(solution, p)

    def strategy(t, x, w):
        perm, _ = rank_of(x)
        return pi_tilde[perm], p.consumption_scale * consumption_rate(t, w, solution)

    return strategy


@dataclass
class GapRow:
    label: str
    gap: float
    stderr: float
    value: float
    n_inadmissible: int

    def to_dict(self) -> dict:
        return {"label": self.label, "gap": self.gap, "stderr": self.stderr,
                "value": self.value, "n_inadmissible": self.n_inadmissible}


@dataclass
class GapTable:
    optimal: ValueEstimate
    rows: list[GapRow]

    def to_dict(self) -> dict:
        return {"optimal": self.optimal.to_dict(), "gaps": [r.to_dict() for r in self.rows]}


def optimality_gap(model: FirstOrderParams, prefs: Preferences, constraint: ConstraintSpec,
                   perturbations: Sequence[Perturbation] | None, state: MarketState,
                   config: SimConfig) -> GapTable:
    """Paired value differences ``J* - J_pert`` on common random numbers.

    Optimality predicts every gap is at least ``-2 * stderr``.
    """
    solution = solve(model, prefs, constraint)
    if perturbations is None:
        perturbations = default_perturbations(solution)
    strategies = [feedback_strategy(solution)]
    strategies += [_perturbed_strategy(solution, p) for p in perturbations]
    J, ok = path_payoffs(model, strategies, state, config, prefs)
    mean, se = _summarize(J[0][ok[0]])
    optimal = ValueEstimate(mean, se, config.n_paths, int((~ok[0]).sum()),
                            {"sim": config.fingerprint(), "model_hash": model_hash(model)})
    rows = []
    for i, p in enumerate(perturbations, start=1):
        both = ok[0] & ok[i]
        diff = J[0][both] - J[i][both]
        gap, gse = _summarize(diff)
        rows.append(GapRow(p.label, gap, gse, _summarize(J[i][ok[i]])[0], int((~ok[i]).sum())))
    return GapTable(optimal, rows)


@dataclass
class RankInvarianceReport:
    variants: list[list[float]]
    values: list[ValueEstimate]
    max_z: float

    def to_dict(self) -> dict:
        return {"variants": self.variants, "values": [v.to_dict() for v in self.values],
                "max_z": self.max_z}


def variant_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(0x5EED, int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def rank_invariance_check(model: Model, solution: ClosedFormSolution, x0_variants: Sequence,
                          config: SimConfig, w0: float = 1.0) -> RankInvarianceReport:
    """Optimal-strategy value from permuted initial markets, independent seeds.

    Reports the largest pairwise ``|J_a - J_b| / sqrt(se_a**2 + se_b**2)``.
    """
    variants = [np.asarray(x, dtype=np.float64) for x in x0_variants]
    base = np.sort(variants[0])
    for v in variants[1:]:
        if not np.array_equal(np.sort(v), base):
            raise ValueError("x0 variants must be permutations of one vector")
    strat = feedback_strategy(solution)
    values = []
    for j, x0 in enumerate(variants):
        cfg = SimConfig(config.n_paths, config.n_steps, config.t0, config.t1,
                        variant_seed(config.master_seed, j), config.scheme, "full", config.threads)
        values.append(mc_value(model, strat, MarketState(config.t0, x0, w0), cfg, solution.prefs))
    max_z = 0.0
    for a in range(len(values)):
        for b in range(a + 1, len(values)):
            se = np.hypot(values[a].stderr, values[b].stderr)
            diff = abs(values[a].mean - values[b].mean)
            max_z = max(max_z, diff / se if se > 0 else (0.0 if diff == 0 else np.inf))
    return RankInvarianceReport([v.tolist() for v in variants], values, float(max_z))
