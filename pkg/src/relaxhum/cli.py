"""Command-line entry point: ``relaxhum <subcommand> --config run.json``.

Exit status: 0 success, 2 non-convergence, 1 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (DISCLAIMER, carleman_certificate, energy_certificate, epsilon_sweep,
                       estimate_observability_constant, random_terminal)
from .config import ConfigError, RunConfig, parse_config, serialize
from .discretize import SolverError
from .dynamics import (ControlFunction, adjoint_solve, forward_relaxed_linear, forward_relaxed_nonlinear,
                       write_field_csv)
from .hum import nonlinear_control_cubic, nonlinear_control_lipschitz, synthesize_control

log = logging.getLogger("relaxhum")

SUBCOMMANDS = ("forward", "adjoint", "control", "nonlinear-control", "sweep", "observability", "carleman-check")
EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="relaxhum", description="Null controls for the relaxed monodomain system.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweep")
    ap.add_argument("--seed", type=int, help="seed (overrides the config seed)")
    return ap


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=lambda o: o.item() if hasattr(o, "item") else str(o)))


def _write_control(out: Path, problem, result, stem: str = "control") -> None:
    _write_json(out / f"{stem}.json", result.to_json())
    write_field_csv(out / f"{stem}.csv", problem.grid, problem.cell_times, {"f": result.control.values})


def _forward(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    reaction = cfg.build_reaction()
    if reaction.kind == "none":
        traj = forward_relaxed_linear(p, cfg.potential())
    else:
        traj = forward_relaxed_nonlinear(p, reaction)
    traj.to_csv(out / "forward.csv")
    g = p.grid
    _write_json(out / "forward.json", {"terminal_v_norm": g.norm(traj["v"][-1]),
                                       "terminal_ue_norm": g.norm(traj["ue"][-1])})
    return EXIT_OK


def _adjoint(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    traj = adjoint_solve(p, cfg.potential(), random_terminal(p, cfg.seed))
    traj.to_csv(out / "adjoint.csv")
    return EXIT_OK


def _control(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    hc = cfg.build_hum()
    weights = cfg.build_weights(p) if hc.mode == "weighted" else None
    res = synthesize_control(p, cfg.potential(), weights, hc)
    _write_control(out, p, res)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _nonlinear(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    reaction = cfg.build_reaction()
    hc = cfg.build_hum()
    tol, max_outer = cfg.hum.outer_tol, cfg.hum.max_outer
    if reaction.kind == "cubic":
        weights = cfg.build_weights(p, a_inf_norm=reaction.params["c1"])
        res = nonlinear_control_cubic(p, reaction, weights, hc, tol=tol, max_outer=max_outer)
    else:
        res = nonlinear_control_lipschitz(p, reaction, hc, tol=tol, max_outer=max_outer)
    _write_control(out, p, res)
    doc = res.to_json()
    doc["outer_history"] = res.outer_history
    doc["reaction"] = {"kind": reaction.kind, **reaction.params}
    _write_json(out / "control.json", doc)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _sweep(cfg: RunConfig, out: Path, jobs: int) -> int:
    p = cfg.build_problem()
    rep = epsilon_sweep(p, cfg.build_hum(), cfg.sweep.eps_list, weights=cfg.build_weights(p), seed=cfg.seed,
                        jobs=jobs, observability=cfg.sweep.observability, certificates=cfg.sweep.certificates)
    rep.to_csv(out / "sweep.csv")
    rep.to_json(out / "sweep.json")
    return EXIT_OK if rep.all_converged else EXIT_NONCONVERGED


def _observability(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    c, info = estimate_observability_constant(p, cfg.potential(), seed=cfg.seed, return_info=True)
    _write_json(out / "observability.json", {"epsilon": p.epsilon, "c_obs": c, "iterations": info["iterations"],
                                             "shift": info["shift"], "seed": cfg.seed, "note": DISCLAIMER})
    return EXIT_OK


def _carleman(cfg: RunConfig, out: Path) -> int:
    p = cfg.build_problem()
    w = cfg.build_weights(p)
    term = random_terminal(p, cfg.seed)
    cert = carleman_certificate(p, cfg.potential(), w, term)
    energy = energy_certificate(p, w, term, cfg.potential())
    doc = {
        "epsilon": p.epsilon,
        "lambda": w.lam,
        "s": w.s,
        "m": w.m,
        "seed": cfg.seed,
        "carleman": {k: vars(v) for k, v in cert.items()},
        "energy_Mi": vars(energy),
        "energy_ratio_over_eps2": (energy.ratio / p.epsilon**2
                                   if energy.ratio is not None and p.epsilon > 0 else None),
        "note": DISCLAIMER,
    }
    _write_json(out / "carleman.json", doc)
    return EXIT_OK


def dispatch(subcommand: str, cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", serialize(cfg))
    handlers = {
        "forward": _forward,
        "adjoint": _adjoint,
        "control": _control,
        "nonlinear-control": _nonlinear,
        "observability": _observability,
        "carleman-check": _carleman,
    }
    try:
        if subcommand == "sweep":
            return _sweep(cfg, out, jobs)
        if subcommand not in handlers:
            raise ConfigError("", f"unknown subcommand {subcommand!r}")
        return handlers[subcommand](cfg, out)
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_NONCONVERGED


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("relaxhum: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("/seed", "must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        out = Path(args.out or cfg.output.dir)
        return dispatch(args.subcommand, cfg, out, args.jobs)
    except (ConfigError, ValueError) as exc:
        print(f"relaxhum: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
