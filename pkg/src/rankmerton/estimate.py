"""Recovery of rank-based drift and covariance from ranked log paths.

The covariance comes from realized quadratic variation.  The reflection
term has finite variation, so it does not enter.  Drifts invert the ranked
log dynamics

    log Y_k(T) - log Y_k(0) = (mu_k - a_kk/2) T + int Y_k^-1 dPhi_k + noise,

with the collision term taken from the simulation (direct projection
displacement) or from a local-time reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dynamics import PathBundle, Reflection

Array = NDArray[np.float64]


class MissingReflectionError(ValueError):
    """Raised when drift estimation has no collision term to work with."""


@dataclass
class EstimationResult:
    """Per-rank drift and covariance estimates.

    Attributes
    ----------
    mu_hat, mu_stderr : ndarray, shape (d,)
        Drift estimates and their standard errors across paths.
    a_hat : ndarray, shape (d, d)
        Realized covariance of the ranked log increments, per unit time.
    correction : ndarray, shape (d,)
        Mean collision term ``int Y_k^-1 dPhi_k / T`` subtracted per rank.
    per_path : ndarray, shape (n_paths, d)
        Single-path drift estimates (same pooled ``a_hat``).
    horizon : float
        Observation length ``T``.
    """

    mu_hat: Array
    mu_stderr: Array
    a_hat: Array
    correction: Array
    per_path: Array
    horizon: float

    def to_dict(self) -> dict:
        return {"mu_hat": self.mu_hat.tolist(), "mu_stderr": self.mu_stderr.tolist(),
                "a_hat": self.a_hat.tolist(), "correction": self.correction.tolist(),
                "horizon": self.horizon, "n_paths": int(self.per_path.shape[0])}


def _log_paths(paths) -> tuple[Array, Array]:
    if isinstance(paths, PathBundle):
        if paths.Y is None or paths.Y.shape[1] < 2:
            raise ValueError("need full-record paths with at least 2 grid points")
        return np.log(paths.Y), paths.times
    logY, times = paths
    logY = np.asarray(logY, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if logY.ndim != 3 or logY.shape[1] != times.size or times.size < 2:
        raise ValueError("expected log paths of shape (n_paths, n_nodes, d) matching times")
    return logY, times


def realized_cov(paths) -> Array:
    """Realized covariance ``(1/T) sum dlogY_k dlogY_l``, averaged over paths.

    Parameters
    ----------
    paths : PathBundle or tuple (logY, times)
        Ranked paths; a tuple gives log levels of shape ``(n_paths, n_nodes, d)``.
    """
    logY, times = _log_paths(paths)
    dl = np.diff(logY, axis=1)
    T = times[-1] - times[0]
    a = np.einsum("pnk,pnl->kl", dl, dl) / (T * dl.shape[0])
    return 0.5 * (a + a.T)


def collision_drift_estimator(paths: PathBundle, reflection: Reflection | Array | None = None,
                              a_hat: Array | None = None) -> EstimationResult:
    """Drift per rank with the collision term removed.

    Parameters
    ----------
    paths : PathBundle
        Full-record ranked paths.
    reflection : Reflection or ndarray, optional
        Cumulative ``int Y^-1 dPhi`` with shape ``(n_paths, n_nodes, d)``, or a
        :class:`Reflection`.  Defaults to the bundle's own displacement.
    a_hat : ndarray, optional
        Covariance to use; computed by :func:`realized_cov` if omitted.

    Raises
    ------
    MissingReflectionError
        If neither the bundle nor the caller provides the collision term.
    """
    if isinstance(reflection, Reflection):
        phi = reflection.phi_log
    elif reflection is not None:
        phi = np.asarray(reflection, dtype=np.float64)
    else:
        phi = paths.phi_log
        if phi is None and paths.Phi is not None and paths.d == 1:
            phi = np.zeros_like(paths.Y)
    if phi is None:
        raise MissingReflectionError(
            "no collision term available: run estimate_local_time on each adjacent pair "
            "and pass reflection_from_local_times(...) as `reflection`")
    logY, times = _log_paths(paths)
    if phi.shape != logY.shape:
        raise ValueError(f"reflection shape {phi.shape} does not match paths {logY.shape}")
    if a_hat is None:
        a_hat = realized_cov((logY, times))
    T = times[-1] - times[0]
    coll = phi[:, -1, :] - phi[:, 0, :]
    per_path = (logY[:, -1, :] - logY[:, 0, :] - coll) / T + 0.5 * np.diag(a_hat)
    n = per_path.shape[0]
    se = per_path.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(per_path.shape[1])
    return EstimationResult(per_path.mean(axis=0), se, a_hat, coll.mean(axis=0) / T,
                            per_path, float(T))
