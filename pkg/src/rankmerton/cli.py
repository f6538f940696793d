"""Command-line front end: ``rankmerton <command> --config cfg.json``.

Every command prints a JSON report on stdout.  The report is also written to
``<out>/<command>.json`` when an output directory is given by ``--out`` or
the ``RANKMERTON_OUT`` environment variable.  Exit status is 2 for an invalid
configuration and 1 when ``verify`` finds a band violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import SCHEMA_VERSION, load_bundle, save_bundle, simulate, wealth_path
from .estimate import MissingReflectionError, collision_drift_estimator, realized_cov
from .model import validate
from .strategy import feedback_strategy, solve
from .verify import (
    boundary_samples,
    hjb_residual,
    maximizer_crosscheck,
    mc_value,
    neumann_check,
    optimality_gap,
    rank_invariance_check,
)

OUT_ENV = "RANKMERTON_OUT"
COMMANDS = ("validate", "solve", "simulate", "value", "verify", "estimate", "compare")

log = logging.getLogger("rankmerton")


def _out_dir(args) -> Path | None:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(args, cfg: ExperimentConfig | None, command: str, body: dict) -> None:
    report = {"schema_version": SCHEMA_VERSION, "command": command}
    if cfg is not None:
        report.update(fingerprint=cfg.fingerprint(), seed=cfg.seed)
    report.update(body)
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        (out / f"{command}.json").write_text(text)


def _overrides(args) -> dict:
    return {"seed": args.seed, "paths": args.paths, "steps": args.steps}


def cmd_validate(args, cfg: ExperimentConfig) -> int:
    report = validate(cfg.model)
    _emit(args, cfg, "validate", {"ok": report.ok, "violations": report.violations,
                                  "details": report.details})
    return 0 if report.ok else 2


def cmd_solve(args, cfg: ExperimentConfig) -> int:
    sol = solve(cfg.model, cfg.prefs, cfg.constraint)
    T = cfg.prefs.horizon_T
    grid = np.linspace(0.0, T, 21)
    body = sol.to_dict()
    body.update(f_grid=[[float(t), float(f)] for t, f in zip(grid, sol.f(grid))],
                value_at=float(sol.value(0.0, cfg.w0)),
                consumption_at=float(sol.consumption(0.0, cfg.w0)), w0=cfg.w0)
    _emit(args, cfg, "solve", body)
    return 0


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    sim = cfg.sim_config(threads=args.threads)
    bundle = simulate(cfg.model, cfg.x0, sim)
    sol = solve(cfg.model, cfg.prefs, cfg.constraint)
    wp = wealth_path(bundle, feedback_strategy(sol), cfg.w0)
    out = _out_dir(args) or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    csv = save_bundle(bundle, out / "paths.csv", V=wp.V)
    _emit(args, cfg, "simulate", {"csv": csv.name, "n_paths": sim.n_paths,
                                  "n_steps": sim.n_steps, "scheme": sim.scheme,
                                  "n_inadmissible": wp.n_inadmissible})
    return 0


def _value_block(cfg: ExperimentConfig, threads: int) -> dict:
    sol = solve(cfg.model, cfg.prefs, cfg.constraint)
    est = mc_value(cfg.model, feedback_strategy(sol), cfg.state(),
                   cfg.sim_config(threads=threads), cfg.prefs)
    closed = float(sol.value(0.0, cfg.w0))
    z = (est.mean - closed) / est.stderr if est.stderr > 0 else float("inf")
    return {"mc_value": est.to_dict(), "closed_form_value": closed, "z_score": z,
            "rel_error": abs(est.mean - closed) / abs(closed)}


def cmd_value(args, cfg: ExperimentConfig) -> int:
    _emit(args, cfg, "value", _value_block(cfg, args.threads))
    return 0


def _permutations(x0: np.ndarray) -> list[np.ndarray]:
    if x0.size == 1:
        return [x0]
    return [x0, x0[::-1].copy(), np.roll(x0, 1)]


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    opts = cfg.options.get("verify", {})
    rel_tol = float(opts.get("rel_tol", 0.01))
    sol = solve(cfg.model, cfg.prefs, cfg.constraint)
    res = hjb_residual(sol, cfg.model)
    crosscheck = maximizer_crosscheck(sol, cfg.model, seed=cfg.seed % 2**32)

    def candidate(t, y, w):
        return sol.value(t, w)

    neumann = neumann_check(candidate, boundary_samples(cfg.model.d, cfg.prefs.horizon_T))
    value = _value_block(cfg, args.threads)
    gaps = optimality_gap(cfg.model, cfg.prefs, cfg.constraint, None, cfg.state(),
                          cfg.sim_config(threads=args.threads))
    ranks = rank_invariance_check(cfg.model, sol, _permutations(cfg.x0),
                                  cfg.sim_config(threads=args.threads), cfg.w0)
    bands = {
        "hjb_residual": res.max_interior < 1e-6,
        "terminal_condition": res.terminal_error == 0.0,
        "maximizer_crosscheck": crosscheck < 1e-8,
        "neumann": neumann == 0.0,
        "mc_z_score": abs(value["z_score"]) <= 3.0,
        "mc_rel_error": value["rel_error"] <= rel_tol,
        "mc_reliable": value["mc_value"]["reliable"],
        "gaps": all(r.gap >= -2 * r.stderr for r in gaps.rows),
        "rank_invariance": ranks.max_z <= 3.0,
    }
    body = {"hjb_residual": res.to_dict(), "maximizer_crosscheck": crosscheck,
            "neumann_max": neumann, **value, "gaps": gaps.to_dict()["gaps"],
            "rank_invariance": ranks.to_dict(), "bands": bands, "passed": all(bands.values()),
            "solution": sol.to_dict()}
    _emit(args, cfg, "verify", body)
    return 0 if body["passed"] else 1


def cmd_estimate(args, cfg: ExperimentConfig | None) -> int:
    if args.input:
        bundle = load_bundle(args.input)
    else:
        bundle = simulate(cfg.model, cfg.x0, cfg.sim_config(threads=args.threads))
    a_hat = realized_cov(bundle)
    try:
        est = collision_drift_estimator(bundle, a_hat=a_hat)
    except MissingReflectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    body = est.to_dict()
    body["input"] = Path(args.input).name if args.input else None
    _emit(args, cfg, "estimate", body)
    return 0


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    table = optimality_gap(cfg.model, cfg.prefs, cfg.constraint, None, cfg.state(),
                           cfg.sim_config(threads=args.threads))
    out = _out_dir(args)
    if out is not None:
        lines = ["label,gap,stderr,value,n_inadmissible"]
        lines += [f"{r.label},{r.gap!r},{r.stderr!r},{r.value!r},{r.n_inadmissible}"
                  for r in table.rows]
        (out / "gaps.csv").write_text("\n".join(lines) + "\n")
    _emit(args, cfg, "compare", table.to_dict())
    return 0


HANDLERS = {"validate": cmd_validate, "solve": cmd_solve, "simulate": cmd_simulate,
            "value": cmd_value, "verify": cmd_verify, "estimate": cmd_estimate,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankmerton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "estimate", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--paths", type=int, help="number of simulated paths")
        p.add_argument("--steps", type=int, help="time steps per path")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        if name == "estimate":
            p.add_argument("--input", help="PathBundle CSV written by `simulate`")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return 2
    cfg = None
    if args.config:
        try:
            cfg = load_config(args.config, _overrides(args))
        except ConfigError as exc:
            print(f"error: invalid config: {exc}", file=sys.stderr)
            return 2
    elif args.command != "estimate" or not args.input:
        print("error: --config is required", file=sys.stderr)
        return 2
    return HANDLERS[args.command](args, cfg)


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
