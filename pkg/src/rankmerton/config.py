"""JSON experiment configuration.

Example::

    {
      "d": 3,
      "mu_tilde": [0.09, 0.05, 0.01],
      "sigma_tilde": [[0.2, 0, 0], [0, 0.2, 0], [0, 0, 0.2]],
      "r": 0.02, "gamma": 2.0, "beta": 0.1, "T": 1.0,
      "constraint": {"kind": "open_market", "n": 1, "N": 2},
      "x0": [3, 2, 1], "w0": 1.0,
      "simulation": {"paths": 20000, "steps": 250, "seed": 7, "scheme": "named"}
    }

``sigma_tilde`` may also be a flat row-major list of length ``d*d``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import SCHEMES, SimConfig
from .model import ConstraintSpec, FirstOrderParams, MarketState, Preferences, validate

DEFAULT_SIMULATION = {"paths": 20000, "steps": 250, "seed": 0, "scheme": "named"}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ExperimentConfig:
    model: FirstOrderParams
    prefs: Preferences
    constraint: ConstraintSpec
    x0: np.ndarray
    w0: float
    simulation: dict
    options: dict
    raw: dict

    @property
    def seed(self) -> int:
        return int(self.simulation["seed"])

    def sim_config(self, record: str = "full", threads: int = 1, **changes) -> SimConfig:
        sim = {**self.simulation, **changes}
        return SimConfig(int(sim["paths"]), int(sim["steps"]), 0.0, self.prefs.horizon_T,
                         int(sim["seed"]), sim["scheme"], record, threads)

    def state(self) -> MarketState:
        return MarketState(0.0, self.x0, self.w0)

    def fingerprint(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _number(raw: dict, key: str, default=None) -> float:
    if key not in raw:
        if default is None:
            raise ConfigError(key, "missing required field")
        return default
    val = raw[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
        raise ConfigError(key, f"expected a finite number, got {val!r}")
    return float(val)


def _vector(raw: dict, key: str, d: int) -> np.ndarray:
    try:
        arr = np.asarray(raw[key], dtype=np.float64)
    except KeyError:
        raise ConfigError(key, "missing required field") from None
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a list of numbers") from None
    if arr.shape != (d,):
        raise ConfigError(key, f"expected length {d}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "entries must be finite")
    return arr


def _matrix(raw: dict, key: str, d: int) -> np.ndarray:
    try:
        arr = np.asarray(raw[key], dtype=np.float64)
    except KeyError:
        raise ConfigError(key, "missing required field") from None
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a nested or flat list of numbers") from None
    if arr.shape == (d * d,):
        arr = arr.reshape(d, d)
    if arr.shape != (d, d):
        raise ConfigError(key, f"expected a {d}x{d} matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "entries must be finite")
    return arr


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from a JSON object.

    ``overrides`` are merged into the ``simulation`` block (keys ``paths``,
    ``steps``, ``seed``, ``scheme``) before validation, and are part of the
    fingerprint.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a JSON object")
    raw = copy.deepcopy(raw)
    sim = {**DEFAULT_SIMULATION, **raw.get("simulation", {})}
    sim.update({k: v for k, v in (overrides or {}).items() if v is not None})
    raw["simulation"] = sim

    d = raw.get("d")
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise ConfigError("d", f"expected a positive integer, got {d!r}")
    mu = _vector(raw, "mu_tilde", d)
    sigma = _matrix(raw, "sigma_tilde", d)
    r = _number(raw, "r")
    try:
        model = FirstOrderParams(mu, sigma, r)
    except ValueError as exc:
        raise ConfigError("sigma_tilde", str(exc)) from None
    report = validate(model)
    if not report.ok:
        raise ConfigError("sigma_tilde", "model fails validation: " + ", ".join(report.violations))
    try:
        prefs = Preferences(_number(raw, "gamma"), _number(raw, "beta"), _number(raw, "T"))
    except ValueError as exc:
        raise ConfigError("gamma/beta/T", str(exc)) from None

    c = raw.get("constraint", {"kind": "unconstrained"})
    if not isinstance(c, dict):
        raise ConfigError("constraint", "expected an object with kind, n, N")
    try:
        constraint = ConstraintSpec(c.get("kind", "unconstrained"), c.get("n"), c.get("N"))
        constraint.window(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError("constraint", str(exc)) from None

    x0 = _vector(raw, "x0", d) if "x0" in raw else np.arange(d, 0, -1, dtype=np.float64)
    if np.any(x0 <= 0):
        raise ConfigError("x0", "capitalizations must be strictly positive")
    w0 = _number(raw, "w0", 1.0)
    if w0 <= 0:
        raise ConfigError("w0", "initial wealth must be positive")

    for key in ("paths", "steps"):
        v = sim[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"simulation.{key}", f"expected a positive integer, got {v!r}")
    seed = sim["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("simulation.seed", f"expected an unsigned 64-bit integer, got {seed!r}")
    if sim["scheme"] not in SCHEMES:
        raise ConfigError("simulation.scheme", f"expected one of {SCHEMES}, got {sim['scheme']!r}")
    if sim["scheme"] == "ranked" and np.any(np.diff(x0) > 0):
        raise ConfigError("x0", "the ranked scheme needs x0 ordered descending")

    options = {k: raw[k] for k in ("verify", "estimate") if k in raw}
    return ExperimentConfig(model, prefs, constraint, x0, w0, sim, options, raw)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None
    return parse_config(raw, overrides)
