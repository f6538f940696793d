"""Rank-based market parameterization and rank bookkeeping.

A rank-based model assigns drift and volatility to whichever asset currently
occupies rank ``k`` (rank 0 is the largest capitalization).  Two flavours are
supported:

* :class:`FirstOrderParams` - constant per-rank drift ``mu_tilde`` and
  volatility matrix ``sigma_tilde``.
* :class:`RankCoefficients` - arbitrary vectorized evaluators
  ``mu_fn(t, y)`` and ``sigma_fn(t, y)`` of time and the ordered vector ``y``.

Both expose ``drift(t, y)``, ``vol(t, y)`` and ``cov(t, y)`` which broadcast
over leading axes of ``y``, so the simulators treat them identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

Array = NDArray[np.float64]

LIPSCHITZ_NOTE = (
    "sampled probe: passing is necessary but not sufficient for the "
    "Lipschitz/boundedness assumptions"
)


@dataclass(frozen=True, eq=False)
class FirstOrderParams:
    """Constant per-rank coefficients.

    Parameters
    ----------
    mu_tilde : (d,) per-rank drift rates, 1/year
    sigma_tilde : (d, d) volatility matrix, 1/sqrt(year)
    r : risk-free rate, 1/year
    a_tilde : optional (d, d) covariance ``sigma_tilde @ sigma_tilde.T``.
        Stored verbatim when given so that closed forms see exactly the
        supplied matrix (see :meth:`from_covariance`).
    """

    mu_tilde: Array
    sigma_tilde: Array
    r: float
    a_tilde: Array | None = None

    def __post_init__(self):
        mu = np.array(self.mu_tilde, dtype=np.float64).reshape(-1)
        sig = np.array(self.sigma_tilde, dtype=np.float64)
        d = mu.size
        if d < 1:
            raise ValueError("mu_tilde must be non-empty")
        if sig.size == d * d:
            sig = sig.reshape(d, d)
        if sig.shape != (d, d):
            raise ValueError(f"sigma_tilde must be {d}x{d}, got shape {sig.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sig)) and np.isfinite(self.r)):
            raise ValueError("model parameters must be finite")
        if self.a_tilde is None:
            a = sig @ sig.T
        else:
            a = np.array(self.a_tilde, dtype=np.float64).reshape(d, d)
        for arr in (mu, sig, a):
            arr.flags.writeable = False
        object.__setattr__(self, "mu_tilde", mu)
        object.__setattr__(self, "sigma_tilde", sig)
        object.__setattr__(self, "a_tilde", a)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def from_covariance(cls, mu_tilde: ArrayLike, a_tilde: ArrayLike, r: float) -> "FirstOrderParams":
        """Build from a covariance matrix; ``sigma_tilde`` is its SPD square root."""
        a = np.array(a_tilde, dtype=np.float64)
        vals, vecs = np.linalg.eigh(a)
        if vals.min() <= 0:
            raise ValueError("a_tilde must be positive definite")
        sig = (vecs * np.sqrt(vals)) @ vecs.T
        return cls(mu_tilde, 0.5 * (sig + sig.T), r, a_tilde=a)

    @property
    def d(self) -> int:
        return self.mu_tilde.size

    is_constant = True

    def drift(self, t: float, y: Array) -> Array:
        return np.broadcast_to(self.mu_tilde, np.shape(y))

    def vol(self, t: float, y: Array) -> Array:
        return self.sigma_tilde

    def cov(self, t: float, y: Array) -> Array:
        return self.a_tilde

    def fingerprint(self) -> dict:
        return {
            "kind": "first_order",
            "mu_tilde": self.mu_tilde.tolist(),
            "sigma_tilde": self.sigma_tilde.tolist(),
            "r": self.r,
        }


@dataclass(frozen=True)
class RankCoefficients:
    """Generic rank-based coefficients given by evaluators.

    ``mu_fn(t, y)`` must map ``y`` of shape ``(..., d)`` to ``(..., d)`` and
    ``sigma_fn(t, y)`` to ``(..., d, d)``.  Evaluators must be pure.  The
    declared bounds are what :func:`validate` probes against.
    """

    d: int
    mu_fn: Callable[[float, Array], Array]
    sigma_fn: Callable[[float, Array], Array]
    r: float = 0.0
    drift_bound: float = np.inf
    vol_bound: float = np.inf
    ellipticity: float = 0.0
    lipschitz: float = np.inf
    horizon: float = 1.0

    is_constant = False

    def drift(self, t: float, y: Array) -> Array:
        return np.asarray(self.mu_fn(t, y), dtype=np.float64)

    def vol(self, t: float, y: Array) -> Array:
        return np.asarray(self.sigma_fn(t, y), dtype=np.float64)

    def cov(self, t: float, y: Array) -> Array:
        s = self.vol(t, y)
        return s @ np.swapaxes(s, -1, -2)

    def fingerprint(self) -> dict:
        return {
            "kind": "rank_coefficients",
            "d": self.d,
            "mu_fn": getattr(self.mu_fn, "__qualname__", repr(self.mu_fn)),
            "sigma_fn": getattr(self.sigma_fn, "__qualname__", repr(self.sigma_fn)),
            "r": self.r,
        }


Model = Union[FirstOrderParams, RankCoefficients]


@dataclass(frozen=True)
class Preferences:
    """Power-utility preferences ``U(w) = w**(1-gamma) / (1-gamma)``."""

    gamma: float
    beta: float
    horizon_T: float

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0 or self.gamma == 1:
            raise ValueError(f"gamma must be positive and != 1, got {self.gamma}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.horizon_T > 0:
            raise ValueError(f"horizon_T must be positive, got {self.horizon_T}")

    def utility(self, w):
        g = self.gamma
        return np.power(w, 1.0 - g) / (1.0 - g)


@dataclass(frozen=True)
class ConstraintSpec:
    """Portfolio constraint on per-rank weights.

    ``kind`` is one of ``"unconstrained"``, ``"open_market"`` or
    ``"fully_invested"`` (open market plus weights summing to one).  ``n`` and
    ``N`` are 1-based inclusive rank bounds, as in "invest only in the top 500"
    being ``n=1, N=500``.
    """

    kind: str = "unconstrained"
    n: int | None = None
    N: int | None = None

    KINDS = ("unconstrained", "open_market", "fully_invested")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind != "unconstrained":
            if self.n is None or self.N is None:
                raise ValueError(f"{self.kind} constraint needs n and N")
            if not 1 <= self.n <= self.N:
                raise ValueError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")

    @classmethod
    def unconstrained(cls) -> "ConstraintSpec":
        return cls("unconstrained")

    @classmethod
    def open_market(cls, n: int, N: int) -> "ConstraintSpec":
        return cls("open_market", n, N)

    @classmethod
    def fully_invested(cls, n: int, N: int) -> "ConstraintSpec":
        return cls("fully_invested", n, N)

    def window(self, d: int) -> slice:
        """0-based slice of ranks in which investment is allowed."""
        if self.kind == "unconstrained":
            return slice(0, d)
        if self.N > d:
            raise ValueError(f"rank window [{self.n}, {self.N}] exceeds d={d}")
        return slice(self.n - 1, self.N)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind != "unconstrained":
            out.update(n=self.n, N=self.N)
        return out


@dataclass(frozen=True, eq=False)
class MarketState:
    """Initial state ``(t, x, w)``: time, named capitalizations, wealth."""

    t: float
    x: Array
    w: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise ValueError("capitalizations must be finite and strictly positive")
        if not (np.isfinite(self.w) and self.w > 0):
            raise ValueError("wealth must be finite and strictly positive")
        x.flags.writeable = False
        object.__setattr__(self, "x", x)


def rank_of(x: ArrayLike) -> tuple[NDArray[np.intp], Array]:
    """Ranks and order statistics of capitalizations.

    Works on the last axis.  Returns ``(perm, y)`` where ``perm[..., i]`` is the
    0-based rank of asset ``i`` and ``y`` is ``x`` sorted descending.  Ties go to
    the lower asset index, so ``perm`` is always a permutation.

    >>> perm, y = rank_of([1.0, 3.0, 2.0])
    >>> perm.tolist(), y.tolist()
    ([2, 0, 1], [3.0, 2.0, 1.0])
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("rank_of needs finite, strictly positive entries")
    order = np.argsort(-x, axis=-1, kind="stable")
    perm = _invert(order)
    return perm, np.take_along_axis(x, order, axis=-1)


def _invert(order: NDArray[np.intp]) -> NDArray[np.intp]:
    perm = np.empty_like(order)
    ranks = np.broadcast_to(np.arange(order.shape[-1]), order.shape)
    np.put_along_axis(perm, order, ranks, axis=-1)
    return perm


def named_coefficients(t: float, x: ArrayLike, model: Model) -> tuple[Array, Array]:
    """Drift vector and volatility matrix seen by the named assets.

    ``mu[i] = mu_tilde[rank_i]`` and ``sigma[i, j] = sigma_tilde[rank_i, rank_j]``
    with the rank coefficients evaluated at the ordered vector.
    """
    perm, y = rank_of(x)
    mu_r = model.drift(t, y)
    sig_r = np.broadcast_to(model.vol(t, y), y.shape + (y.shape[-1],))
    mu = np.take_along_axis(mu_r, perm, axis=-1)
    rows = np.take_along_axis(sig_r, perm[..., :, None], axis=-2)
    sigma = np.take_along_axis(rows, perm[..., None, :], axis=-1)
    return mu, sigma


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations),
                "details": self.details, "note": self.note}


def validate(model: Model, *, n_probe: int = 2000, seed: int = 0) -> ValidationReport:
    """Check a model against the standing assumptions.

    First-order models get exact checks (symmetry, positive definiteness of
    ``sigma_tilde``, ellipticity of ``a_tilde`` by Cholesky).  Evaluator
    models get a seeded Monte Carlo probe of boundedness, ellipticity and the
    Lipschitz condition on ``y * mu(y)`` and ``diag(y) sigma(y)``.
    """
    if isinstance(model, FirstOrderParams):
        return _validate_first_order(model)
    return _probe_coefficients(model, n_probe=n_probe, seed=seed)


def _validate_first_order(model: FirstOrderParams) -> ValidationReport:
    violations = []
    sig, a = model.sigma_tilde, model.a_tilde
    scale = max(1.0, np.abs(sig).max())
    if not np.allclose(sig, sig.T, rtol=0, atol=1e-12 * scale):
        violations.append("symmetry")
    try:
        linalg.cholesky(a, lower=True)
    except linalg.LinAlgError:
        violations.append("ellipticity")
    eig = np.linalg.eigvalsh(a)
    if "ellipticity" not in violations and eig[0] <= 0:
        violations.append("ellipticity")
    if "symmetry" not in violations:
        try:
            linalg.cholesky(sig, lower=True)
        except linalg.LinAlgError:
            violations.append("positive_definite")
    details = {"min_eigenvalue_a": float(eig[0]), "max_eigenvalue_a": float(eig[-1])}
    return ValidationReport(not violations, violations, details)


def _sample_ordered(rng: np.random.Generator, n: int, d: int, lo: float, hi: float) -> Array:
    y = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(n, d)))
    return -np.sort(-y, axis=-1)


def _probe_coefficients(model: RankCoefficients, *, n_probe: int, seed: int) -> ValidationReport:
    rng = np.random.default_rng(seed)
    d = model.d
    violations = []
    details: dict = {}
    t = rng.uniform(0.0, model.horizon, size=n_probe)
    # log-uniform over many decades so both the origin and infinity get probed
    y1 = _sample_ordered(rng, n_probe, d, 1e-8, 1e4)
    y2 = -np.sort(-(y1 * np.exp(rng.normal(scale=1e-3, size=y1.shape))), axis=-1)

    mus1 = np.empty((n_probe, d))
    mus2 = np.empty((n_probe, d))
    sig1 = np.empty((n_probe, d, d))
    sig2 = np.empty((n_probe, d, d))
    try:
        for i in range(n_probe):
            mus1[i] = model.drift(t[i], y1[i])
            mus2[i] = model.drift(t[i], y2[i])
            sig1[i] = model.vol(t[i], y1[i])
            sig2[i] = model.vol(t[i], y2[i])
    except Exception as exc:  # evaluator errors are reported, not raised
        return ValidationReport(False, ["evaluator"], {"error": repr(exc)}, LIPSCHITZ_NOTE)

    if not (np.all(np.isfinite(mus1)) and np.all(np.isfinite(sig1))
            and np.all(np.isfinite(mus2)) and np.all(np.isfinite(sig2))):
        violations.append("finite")
        return ValidationReport(False, violations, details, LIPSCHITZ_NOTE)

    max_drift = float(np.abs(np.concatenate([mus1, mus2])).max())
    max_vol = float(np.linalg.norm(np.concatenate([sig1, sig2]), ord=2, axis=(-2, -1)).max())
    a = sig1 @ np.swapaxes(sig1, -1, -2)
    min_eig = float(np.linalg.eigvalsh(a)[:, 0].min())
    details.update(max_drift=max_drift, max_vol=max_vol, min_eigenvalue_a=min_eig)
    if max_drift > model.drift_bound:
        violations.append("drift_bound")
    if max_vol > model.vol_bound:
        violations.append("vol_bound")
    if min_eig < model.ellipticity or min_eig <= 0:
        violations.append("ellipticity")

    num = (np.linalg.norm(y1 * mus1 - y2 * mus2, axis=-1)
           + np.linalg.norm(y1[..., :, None] * sig1 - y2[..., :, None] * sig2, ord="fro", axis=(-2, -1)))
    den = np.linalg.norm(y1 - y2, axis=-1)
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    worst = int(np.argmax(ratio))
    details.update(worst_lipschitz_ratio=float(ratio[worst]), worst_lipschitz_y=y1[worst].tolist())
    if ratio[worst] > model.lipschitz:
        violations.append("lipschitz")
    return ValidationReport(not violations, violations, details, LIPSCHITZ_NOTE)
