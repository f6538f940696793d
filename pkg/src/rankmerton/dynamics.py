"""Path simulation for rank-based markets.

Two schemes share one noise stream:

``"named"``
    Euler-Maruyama for ``log X`` with coefficients looked up by current rank;
    the ranked paths are ``Y = sort(X)``.
``"ranked"``
    Euler proposal for ``log Y`` using the rank coefficients directly, then
    Euclidean projection back onto the descending cone (PAVA).  The projection
    displacement is the discrete reflection term.

Noise is generated in fixed blocks of ``BLOCK_SIZE`` paths.  Block ``b`` draws
from ``SeedSequence(master_seed, spawn_key=(b,))``, one path after another, so
a path's increments depend only on the master seed, its index and the number
of steps.  Worker count never changes the numbers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .isotonic import project_descending
from .model import Model, rank_of

log = logging.getLogger(__name__)

Array = NDArray[np.float64]
Strategy = Callable[[float, Array, Array], tuple[Array, Array]]

BLOCK_SIZE = 4096
SCHEMES = ("named", "ranked")
TIE_TOL = 1e-12
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    """Simulation grid and seeding.

    ``record="terminal"`` keeps only the first and last grid nodes (and no
    noise), which is what large moment studies need.
    """

    n_paths: int
    n_steps: int
    t0: float = 0.0
    t1: float = 1.0
    master_seed: int = 0
    scheme: str = "named"
    record: str = "full"
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")
        if not self.t1 > self.t0:
            raise ValueError(f"need t0 < t1, got t0={self.t0}, t1={self.t1}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record not in ("full", "terminal"):
            raise ValueError(f"record must be 'full' or 'terminal', got {self.record!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> Array:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def fingerprint(self) -> dict:
        return {"n_paths": self.n_paths, "n_steps": self.n_steps, "t0": self.t0,
                "t1": self.t1, "master_seed": self.master_seed, "scheme": self.scheme}


@dataclass
class PathBundle:
    """Simulated paths, path-major: arrays are ``(n_paths, n_nodes, d)``.

    ``Phi`` is the cumulative reflection in currency units: each step adds
    the level change caused by reordering (named scheme) or projection
    (ranked scheme).  ``phi_log`` is the same displacement in log units,
    i.e. the exact discrete version of ``int Y^-1 dPhi``.
    """

    times: Array
    Y: Array
    Phi: Array
    phi_log: Array
    X: Array | None = None
    dW: Array | None = None
    V: Array | None = None
    model: Model | None = None
    config: SimConfig | None = None
    noise_seed_map: dict = field(default_factory=dict)
    failed: NDArray[np.bool_] | None = None
    order: NDArray[np.int16] | None = None

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[-1]

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])


def seed_map(master_seed: int) -> dict:
    return {"master_seed": int(master_seed), "block_size": BLOCK_SIZE,
            "bit_generator": "PCG64",
            "derivation": "SeedSequence(master_seed, spawn_key=(path_index // block_size,))",
            "layout": "per block: paths in order, each (n_steps, d) standard normals"}


def block_noise(master_seed: int, block: int, n_rows: int, n_steps: int, d: int, h: float) -> Array:
    """Brownian increments for paths ``block*BLOCK_SIZE ... + n_rows``.

    Shape ``(n_rows, n_steps, d)``.  Rows are drawn sequentially, so the first
    ``k`` rows do not depend on ``n_rows``.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(block),))
    rng = np.random.Generator(np.random.PCG64(ss))
    return np.sqrt(h) * rng.standard_normal((n_rows, n_steps, d))


def _blocks(n_paths: int) -> list[tuple[int, int, int]]:
    out = []
    for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        out.append((b, start, min(BLOCK_SIZE, n_paths - start)))
    return out


def ranked_increment(model: Model, t: float, logy: Array, dB: Array, h: float) -> Array:
    """Unconstrained log-Euler increment of the ranked coordinates."""
    y = np.exp(logy)
    mu = model.drift(t, y)
    if model.is_constant:
        a_diag = np.diagonal(model.a_tilde)
        return (mu - 0.5 * a_diag) * h + dB @ model.sigma_tilde.T
    sig = np.broadcast_to(model.vol(t, y), y.shape + (y.shape[-1],))
    a_diag = np.einsum("...kl,...kl->...k", sig, sig)
    return (mu - 0.5 * a_diag) * h + np.einsum("...kl,...l->...k", sig, dB)


def ranked_noise(model: Model, t: float, y: Array, dB: Array) -> Array:
    """``sigma_tilde(t, y) @ dB`` per path."""
    if model.is_constant:
        return dB @ model.sigma_tilde.T
    sig = np.broadcast_to(model.vol(t, y), y.shape + (y.shape[-1],))
    return np.einsum("...kl,...l->...k", sig, dB)


def named_drift_and_noise(model: Model, t: float, x: Array, dW: Array) -> tuple[Array, Array]:
    """Named drift ``mu_i`` and noise ``(sigma dW)_i`` for one step.

    In rank space the noise is ``sigma_tilde @ dB`` with ``dB_l = dW_{order[l]}``;
    asset ``i`` picks up the entry of its rank, which is the same as
    ``sum_j sigma_tilde[rank_i, rank_j] dW_j``.
    """
    perm, y = rank_of(x)
    order = np.argsort(perm, axis=-1)
    dB = np.take_along_axis(dW, order, axis=-1)
    noise_r = ranked_noise(model, t, y, dB)
    mu = np.take_along_axis(model.drift(t, y), perm, axis=-1)
    return mu, np.take_along_axis(noise_r, perm, axis=-1)


def _run_block(model: Model, start: Array, cfg: SimConfig, dW: Array) -> dict:
    """Simulate one block time-major; ``start`` is the initial log vector."""
    n_rows = dW.shape[0]
    d = start.shape[-1]
    h = cfg.h
    times = cfg.times
    full = cfg.record == "full"
    n_rec = cfg.n_steps + 1 if full else 2
    named = cfg.scheme == "named"

    cur = np.broadcast_to(start, (n_rows, d)).copy()
    logy = -np.sort(-cur, axis=-1) if named else cur.copy()
    phi_log = np.zeros((n_rows, d))
    phi = np.zeros((n_rows, d))
    failed = np.zeros(n_rows, dtype=bool)

    rec_x = np.empty((n_rec, n_rows, d)) if named else None
    rec_order = np.empty((n_rec, n_rows, d), dtype=np.int16) if named and full else None
    rec_y = np.empty((n_rec, n_rows, d))
    rec_phi = np.empty((n_rec, n_rows, d))
    rec_phil = np.empty((n_rec, n_rows, d))

    def store(slot):
        if named:
            rec_x[slot] = cur
        rec_y[slot] = logy
        rec_phi[slot] = phi
        rec_phil[slot] = phi_log

    store(0)
    # overflow is detected and reported per path below
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(cfg.n_steps):
            t = times[n]
            dw = dW[:, n, :]
            if named:
                order = np.argsort(-cur, axis=-1, kind="stable")
                if full:
                    rec_order[n] = order
                dB = np.take_along_axis(dw, order, axis=-1)
                incr_r = ranked_increment(model, t, logy, dB, h)
                incr = np.empty_like(incr_r)
                np.put_along_axis(incr, order, incr_r, axis=-1)
                cur = cur + incr
                new_y = -np.sort(-cur, axis=-1)
                delta = new_y - (logy + incr_r)
            else:
                prop = logy + ranked_increment(model, t, logy, dw, h)
                new_y = project_descending(prop)
                delta = new_y - prop
                cur = new_y
            bad = ~np.all(np.isfinite(new_y), axis=-1) & ~failed
            if bad.any():
                log.warning("step %d: %d path(s) overflowed and were aborted", n, int(bad.sum()))
                failed |= bad
            phi_log += delta
            phi += np.exp(new_y) * -np.expm1(-delta)
            logy = new_y
            if full:
                store(n + 1)
    if not full:
        store(1)
    out = {"logy": rec_y, "phi": rec_phi, "phi_log": rec_phil, "failed": failed}
    if named:
        out["logx"] = rec_x
    if rec_order is not None:
        rec_order[-1] = np.argsort(-cur, axis=-1, kind="stable")
        out["order"] = rec_order
    return out


def _prepare_start(model: Model, v0: ArrayLike, scheme: str) -> Array:
    v0 = np.asarray(v0, dtype=np.float64).reshape(-1)
    d = model.d
    if v0.shape != (d,):
        raise ValueError(f"initial vector must have length {d}, got {v0.size}")
    if not np.all(np.isfinite(v0)) or np.any(v0 <= 0):
        raise ValueError("initial capitalizations must be finite and strictly positive")
    if scheme == "ranked" and np.any(np.diff(v0) > 0):
        raise ValueError("initial ranked vector must be ordered descending")
    return np.log(v0)


def iter_blocks(model: Model, v0: ArrayLike, cfg: SimConfig) -> Iterator[PathBundle]:
    """Yield one :class:`PathBundle` per noise block, in path order.

    With ``cfg.threads > 1`` blocks are computed concurrently; the yield order
    and contents do not change.
    """
    start = _prepare_start(model, v0, cfg.scheme)
    blocks = _blocks(cfg.n_paths)

    def work(spec):
        b, first, n_rows = spec
        dW = block_noise(cfg.master_seed, b, n_rows, cfg.n_steps, model.d, cfg.h)
        res = _run_block(model, start, cfg, dW)
        return _to_bundle(res, dW if cfg.record == "full" else None, model, cfg)

    if cfg.threads <= 1:
        for spec in blocks:
            yield work(spec)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            yield from pool.map(work, blocks)


def _to_bundle(res: dict, dW: Array | None, model: Model, cfg: SimConfig) -> PathBundle:
    times = cfg.times if cfg.record == "full" else cfg.times[[0, -1]]

    def pm(a):
        return np.ascontiguousarray(np.swapaxes(a, 0, 1))

    X = np.exp(pm(res["logx"])) if "logx" in res else None
    order = pm(res["order"]) if "order" in res else None
    return PathBundle(times=times, Y=np.exp(pm(res["logy"])), Phi=pm(res["phi"]),
                      phi_log=pm(res["phi_log"]), X=X, dW=dW, model=model, config=cfg,
                      noise_seed_map=seed_map(cfg.master_seed), failed=res["failed"],
                      order=order)


def concat_bundles(parts: list[PathBundle]) -> PathBundle:
    first = parts[0]
    if len(parts) == 1:
        return first

    def cat(name):
        arrs = [getattr(p, name) for p in parts]
        return None if arrs[0] is None else np.concatenate(arrs, axis=0)

    return replace(first, Y=cat("Y"), Phi=cat("Phi"), phi_log=cat("phi_log"), X=cat("X"),
                   dW=cat("dW"), V=cat("V"), failed=cat("failed"), order=cat("order"))


def simulate_named(model: Model, x0: ArrayLike, config: SimConfig) -> PathBundle:
    """Simulate named capitalizations by log-Euler; ``Y`` is the per-node sort."""
    return concat_bundles(list(iter_blocks(model, x0, replace(config, scheme="named"))))


def simulate_ranked_reflected(model: Model, y0: ArrayLike, config: SimConfig) -> PathBundle:
    """Simulate the ranked process directly with projection onto the ordered cone."""
    return concat_bundles(list(iter_blocks(model, y0, replace(config, scheme="ranked"))))


def simulate(model: Model, v0: ArrayLike, config: SimConfig) -> PathBundle:
    return concat_bundles(list(iter_blocks(model, v0, config)))


@dataclass
class WealthPaths:
    times: Array
    V: Array
    c: Array
    admissible: NDArray[np.bool_]

    @property
    def n_inadmissible(self) -> int:
        return int((~self.admissible).sum())


def wealth_path(paths: PathBundle, strategy: Strategy, w0: float) -> WealthPaths:
    """Euler scheme for wealth driven by the bundle's own noise.

    ``strategy(t, x, w)`` receives ``x`` of shape ``(n_paths, d)`` and ``w`` of
    shape ``(n_paths,)`` and returns named weights and consumption rates.  For a
    ranked-scheme bundle the ordered ``Y`` plays the role of ``x``.  Paths whose
    wealth hits zero or below are marked inadmissible and carried as NaN.
    """
    if not w0 > 0:
        raise ValueError("initial wealth must be positive")
    if paths.dW is None or paths.model is None:
        raise ValueError("wealth_path needs a fully recorded bundle with its noise and model")
    model = paths.model
    xs = paths.X if paths.X is not None else paths.Y
    n_paths, n_nodes, d = xs.shape
    times, h, r = paths.times, paths.h, model.r
    V = np.empty((n_paths, n_nodes))
    C = np.empty((n_paths, n_nodes))
    V[:, 0] = w0
    ok = np.ones(n_paths, dtype=bool)
    for n in range(n_nodes - 1):
        t, x, w = times[n], xs[:, n], V[:, n]
        pi, c = strategy(t, x, w)
        C[:, n] = c
        # portfolio drift and noise evaluated in rank space
        if paths.X is None:
            y, pi_r, dB = x, pi, paths.dW[:, n]
        else:
            order = paths.order[:, n] if paths.order is not None else \
                np.argsort(-x, axis=-1, kind="stable")
            y = np.take_along_axis(x, order, axis=-1)
            pi_r = np.take_along_axis(pi, order, axis=-1)
            dB = np.take_along_axis(paths.dW[:, n], order, axis=-1)
        excess = np.sum(pi_r * (model.drift(t, y) - r), axis=-1)
        port_noise = np.sum(pi_r * ranked_noise(model, t, y, dB), axis=-1)
        v_new = w + (w * (r + excess) - c) * h + w * port_noise
        hit = ok & ~(v_new > 0)
        if hit.any():
            log.warning("step %d: wealth nonpositive on %d path(s)", n, int(hit.sum()))
            ok &= ~hit
            v_new = np.where(ok, v_new, np.nan)
        V[:, n + 1] = v_new
    C[:, -1] = strategy(times[-1], xs[:, -1], V[:, -1])[1]
    return WealthPaths(times, V, C, ok)


@dataclass
class LocalTimeEstimate:
    """Occupation-time estimate of the collision local time of ranks ``pair``.

    Local time is in log units: it is that of ``log Y_k - log Y_l``.
    ``paths`` holds each path's cumulative estimate at every node.
    """

    pair: tuple[int, int]
    epsilon: float
    estimate: float
    stderr: float
    paths: Array

    def __post_init__(self):
        if self.estimate < 0:
            raise ValueError("local time estimate must be nonnegative")


def estimate_local_time(paths: PathBundle, pair: tuple[int, int], epsilon: float,
                        model: Model | None = None) -> LocalTimeEstimate:
    """``(1/2eps) * sum 1{|G| <= eps} d<G>`` for ``G = log Y_k - log Y_l``.

    The bracket increment uses the model covariance at the current state.
    Ranks are 0-based.
    """
    k, l = pair
    if not 0 <= k < l < paths.d:
        raise ValueError(f"need 0 <= k < l < d, got pair {pair}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    model = model if model is not None else paths.model
    if model is None:
        raise ValueError("a model is needed for the bracket increments")
    h = paths.h
    Y = paths.Y[:, :-1]
    gap = np.log(Y[..., k]) - np.log(Y[..., l])
    if model.is_constant:
        a = model.a_tilde
        q = np.full(gap.shape, a[k, k] + a[l, l] - 2 * a[k, l])
    else:
        a = np.stack([model.cov(t, Y[:, n]) for n, t in enumerate(paths.times[:-1])], axis=1)
        a = np.broadcast_to(a, Y.shape + (paths.d,))
        q = a[..., k, k] + a[..., l, l] - 2 * a[..., k, l]
    step = float(np.sqrt(np.median(q) * h))
    if epsilon < step:
        warnings.warn(f"epsilon={epsilon:g} is below the typical step displacement {step:.3g}; "
                      "local-time estimate is unreliable", RuntimeWarning, stacklevel=2)
    incr = np.where(np.abs(gap) <= epsilon, q * h, 0.0) / (2 * epsilon)
    cum = np.concatenate([np.zeros((paths.n_paths, 1)), np.cumsum(incr, axis=1)], axis=1)
    term = cum[:, -1]
    se = float(term.std(ddof=1) / np.sqrt(term.size)) if term.size > 1 else 0.0
    return LocalTimeEstimate((k, l), float(epsilon), float(term.mean()), se, cum)


def rank_counts(Y: Array, tol: float = TIE_TOL) -> NDArray[np.int64]:
    """Number of assets tied with rank ``k`` (log difference within ``tol``)."""
    logy = np.log(Y)
    close = np.abs(logy[..., :, None] - logy[..., None, :]) <= tol
    return close.sum(axis=-1)


@dataclass
class Reflection:
    phi_log: Array
    Phi: Array | None = None


def reflection_from_local_times(local_times: Mapping[tuple[int, int], LocalTimeEstimate],
                                counts: NDArray[np.int64], Y: Array | None = None) -> Reflection:
    """Rebuild per-rank reflection paths from pairwise collision local times.

    Every adjacent pair ``(k, k+1)`` must be present; other pairs are used
    when supplied.  ``counts`` are the tie counts ``N_k`` on the grid
    (:func:`rank_counts`) and weight each step by ``1/N_k`` at its left node.
    With ``Y`` given, the currency-unit reflection is returned as well.
    """
    d = counts.shape[-1]
    for k in range(d - 1):
        if (k, k + 1) not in local_times:
            raise KeyError(f"missing local time for adjacent rank pair ({k}, {k + 1})")
    n_paths, n_nodes = counts.shape[0], counts.shape[1]
    dphi = np.zeros((n_paths, n_nodes - 1, d))
    inv_n = 1.0 / counts[:, :-1, :]
    for (k, l), lt in local_times.items():
        dL = np.diff(lt.paths, axis=1)
        dphi[..., k] += 0.5 * dL * inv_n[..., k]
        dphi[..., l] -= 0.5 * dL * inv_n[..., l]
    zero = np.zeros((n_paths, 1, d))
    phi_log = np.concatenate([zero, np.cumsum(dphi, axis=1)], axis=1)
    Phi = None
    if Y is not None:
        Phi = np.concatenate([zero, np.cumsum(Y[:, 1:] * -np.expm1(-dphi), axis=1)], axis=1)
    return Reflection(phi_log, Phi)


def model_hash(model: Model | None) -> str:
    if model is None:
        return ""
    blob = json.dumps(model.fingerprint(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_bundle(bundle: PathBundle, path: str | Path, V: Array | None = None) -> Path:
    """Write ``bundle`` as CSV plus a ``.json`` metadata sidecar.

    Columns: ``path_id, step, t, X_1..X_d, Y_1..Y_d, Phi_1..Phi_d, V``.  Missing
    quantities (``X`` for the ranked scheme, ``V`` without wealth) are ``nan``.
    """
    path = Path(path)
    d, n_paths, n_nodes = bundle.d, bundle.n_paths, bundle.times.size
    V = V if V is not None else bundle.V
    nan_block = np.full((n_paths, n_nodes, d), np.nan)
    X = bundle.X if bundle.X is not None else nan_block
    Vcol = V if V is not None else np.full((n_paths, n_nodes), np.nan)
    pid, step = np.meshgrid(np.arange(n_paths), np.arange(n_nodes), indexing="ij")
    table = np.column_stack([
        pid.ravel(), step.ravel(), np.broadcast_to(bundle.times, (n_paths, n_nodes)).ravel(),
        X.reshape(-1, d), bundle.Y.reshape(-1, d), bundle.Phi.reshape(-1, d), Vcol.ravel()])
    header = ",".join(["path_id", "step", "t"] + [f"{p}_{i + 1}" for p in "X Y Phi".split()
                                                  for i in range(d)] + ["V"])
    fmt = ["%d", "%d"] + ["%.17g"] * (table.shape[1] - 2)
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=header, comments="")
    cfg = bundle.config
    meta = {"schema_version": SCHEMA_VERSION, "d": d, "n_paths": n_paths,
            "n_nodes": n_nodes, "h": bundle.h,
            "seed": cfg.master_seed if cfg else None,
            "scheme": cfg.scheme if cfg else None,
            "record": cfg.record if cfg else None,
            "model_hash": model_hash(bundle.model),
            "model": bundle.model.fingerprint() if bundle.model is not None else None,
            "noise_seed_map": bundle.noise_seed_map}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(path: str | Path) -> PathBundle:
    """Read a bundle written by :func:`save_bundle` (no model, no noise)."""
    path = Path(path)
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    d = (table.shape[1] - 4) // 3
    n_paths = int(table[:, 0].max()) + 1
    n_nodes = table.shape[0] // n_paths
    rows = table.reshape(n_paths, n_nodes, -1)
    times = rows[0, :, 2].copy()
    X = rows[..., 3:3 + d]
    Y = np.ascontiguousarray(rows[..., 3 + d:3 + 2 * d])
    Phi = np.ascontiguousarray(rows[..., 3 + 2 * d:3 + 3 * d])
    V = rows[..., -1]
    # invert the per-step level displacement back to log units
    dphi = -np.log1p(-np.diff(Phi, axis=1) / Y[:, 1:])
    phi_log = np.concatenate([np.zeros((n_paths, 1, d)), np.cumsum(dphi, axis=1)], axis=1)
    return PathBundle(times=times, Y=Y, Phi=Phi, phi_log=phi_log,
                      X=None if np.isnan(X).all() else np.ascontiguousarray(X),
                      V=None if np.isnan(V).all() else np.ascontiguousarray(V),
                      noise_seed_map=meta.get("noise_seed_map", {}))
