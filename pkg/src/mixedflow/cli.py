"""Command-line entry point: ``mixedflow <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime invariant violation.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .agent.dqn import CheckpointError
from .agent.network import NonFiniteError
from .config import ConfigError, Preset, ScenarioConfig, dump_config, load_config, vpm_to_vpkm
from .game import (
    DomainError,
    NoEquilibriumError,
    RegimeError,
    ScalingParams,
    UnidentifiableError,
    estimate_lambda,
    mean_speed_grid,
    nominals_from_config,
    solve_equilibrium,
)
from .traffic import CollisionError, InfeasibleScenarioError

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
log = logging.getLogger("mixedflow")


class UsageError(ConfigError):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="full", choices=("full", "desk"))
    p.add_argument("--config", help="YAML file overriding preset values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--log-every", type=int, default=None, help="trajectory CSV decimation factor")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="d<vpm>_p<penetration>, e.g. d40_p0.5")
    p.add_argument("--density", type=float, help="vehicles per mile per lane")
    p.add_argument("--penetration", type=float, help="AV share in [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixedflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one scenario's shared Q-network")
    _add_common(p)
    _add_scenario(p)
    p.add_argument("--episodes", type=int)

    for name, helptext in (("evaluate", "greedy evaluation of a checkpoint"), ("baseline", "no-control runs")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_scenario(p)
        p.add_argument("--episodes", type=int)
        p.add_argument("--length", type=float, help="episode length [s]")
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("compare", help="report from a matrix output directory")
    _add_common(p)
    p.add_argument("--root", required=True, help="directory holding <scenario>/{evaluate,baseline}")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--densities", type=float, nargs="+")
    p.add_argument("--penetrations", type=float, nargs="+")

    p = sub.add_parser("equilibrium", help="game-model equilibrium at class densities")
    _add_common(p)
    p.add_argument("--rho1", type=float, required=True, help="HV density")
    p.add_argument("--rho2", type=float, required=True, help="AV density")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--units", choices=("vpkm", "vpm"), default="vpkm")

    p = sub.add_parser("estimate-lambda", help="fit the surplus split factor to Edie records")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="edie.csv files or directories searched recursively")

    p = sub.add_parser("lambda-regression", help="surplus vs spatial-metric improvement")
    _add_common(p)
    p.add_argument("--root", help="matrix output directory")
    p.add_argument("--points", help="CSV with columns M_t_improvement,surplus_pct")
    p.add_argument("--densities", type=float, nargs="+")
    p.add_argument("--penetrations", type=float, nargs="+")

    p = sub.add_parser("matrix", help="run every scenario of a preset")
    _add_common(p)
    p.add_argument("--mode", default="all", choices=("all", "train", "evaluate", "baseline"))
    p.add_argument("--densities", type=float, nargs="+")
    p.add_argument("--penetrations", type=float, nargs="+")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=("print",))
    p.add_argument("--preset", default="full", choices=("full", "desk"))
    p.add_argument("--config")
    return ap


def _preset(args) -> Preset:
    return load_config(args.config, args.preset)


def _scenario(args, preset: Preset) -> ScenarioConfig:
    d, p = args.density, args.penetration
    if args.scenario:
        m = re.fullmatch(r"d([0-9.]+)_p([0-9.]+)", args.scenario)
        if not m:
            raise UsageError(f"--scenario {args.scenario!r} is not of the form d<vpm>_p<share>")
        d, p = float(m.group(1)), float(m.group(2))
    if d is None or p is None:
        raise UsageError("give --scenario or both --density and --penetration")
    cfg = dataclasses.replace(preset.scenario, density_vpm=d, av_penetration=p)
    cfg.validate()
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _print(obj) -> None:
    from .harness.io import _clean

    print(json.dumps(_clean(obj), indent=2, sort_keys=True, default=str))


def _edie_inputs(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        files += sorted(p.rglob("edie.csv")) if p.is_dir() else [p]
    if not files:
        raise UsageError("no edie.csv inputs found")
    return files


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .harness import io
    from .harness.compare import cmd_compare, regression_points
    from .harness.matrix import cmd_matrix
    from .harness.regression import lambda_regression
    from .harness.runner import cmd_baseline, cmd_evaluate, cmd_train

    if args.command == "config":
        sys.stdout.write(dump_config(load_config(args.config, args.preset)))
        return EXIT_OK
    preset = _preset(args)
    cmd = args.command
    if cmd == "train":
        cfg = _scenario(args, preset)
        tcfg = preset.train if args.episodes is None else dataclasses.replace(preset.train, episodes=args.episodes)
        tcfg.validate()
        out = cmd_train(cfg, tcfg, args.seed, _out(args, f"runs/{cfg.name}/train"))
        print(out)
    elif cmd in ("evaluate", "baseline"):
        cfg = _scenario(args, preset)
        length = args.length or preset.evaluate.episode_length
        cfg = dataclasses.replace(cfg, episode_length=length)
        cfg.validate()
        out = _out(args, f"runs/{cfg.name}/{cmd}")
        if cmd == "evaluate":
            summ = cmd_evaluate(cfg, preset.train, preset.evaluate, args.checkpoint, args.seed, out, args.episodes,
                                length, args.log_every)
        else:
            summ = cmd_baseline(cfg, preset.train, preset.evaluate, args.seed, out, args.episodes, length,
                                args.log_every)
        _print({k: v for k, v in summ.items() if k != "episodes"})
    elif cmd == "compare":
        scen = preset.scenarios(args.densities, args.penetrations)
        rep = cmd_compare(args.root, scen, _out(args, str(Path(args.root) / "compare")), args.lam,
                          taus=preset.evaluate.taus)
        _print({"out": str(rep.out), "lambda": rep.lam, "identities_ok": rep.identities_ok,
                "missing": rep.missing, "fd_points": rep.fd_points})
        return EXIT_OK if rep.identities_ok else EXIT_INVARIANT
    elif cmd == "equilibrium":
        r1, r2 = args.rho1, args.rho2
        if args.units == "vpm":
            r1, r2 = vpm_to_vpkm(r1), vpm_to_vpkm(r2)
        try:
            sol = solve_equilibrium(r1, r2, args.lam, nominals_from_config(preset.scenario), ScalingParams())
        except NoEquilibriumError as exc:
            # user-supplied densities outside the solvable range are an input error
            raise UsageError(str(exc)) from exc
        _print(sol.to_dict())
    elif cmd == "estimate-lambda":
        from .harness.compare import _speed_grid_points

        recs = [io.read_edie_csv(f) for f in _edie_inputs(args.inputs)]
        pts = [p[:4] for p in _speed_grid_points(recs)]
        if not pts:
            raise UnidentifiableError("inputs hold no cells with both classes")
        nominals = nominals_from_config(preset.scenario)
        r1, r2, u1, u2 = (np.array(c) for c in zip(*pts))
        grid = mean_speed_grid(r1, r2, u1, u2, rho_max=(nominals[0].jam_density, nominals[1].jam_density))
        est = estimate_lambda(grid, nominals)
        out = _out(args, "lambda")
        out.mkdir(parents=True, exist_ok=True)
        io.write_csv(out / "lambda_loss.csv", ["lambda", "loss"], est.curve)
        res = {"lambda_star": est.lam, "loss": est.loss, "mae_HV": est.mae1, "mae_AV": est.mae2, "mae": est.mae,
               "cells": est.n_cells}
        io.write_json(out / "lambda.json", res)
        _print(res)
    elif cmd == "lambda-regression":
        if args.points:
            rows = io.read_csv(args.points)
            x = [io.parse(r["M_t_improvement"]) for r in rows]
            y = [io.parse(r["surplus_pct"]) for r in rows]
        elif args.root:
            scen = preset.scenarios(args.densities, args.penetrations)
            x, y, _ = regression_points(Path(args.root), scen, nominals_from_config(preset.scenario),
                                        ScalingParams())
        else:
            raise UsageError("give --root or --points")
        res = lambda_regression(x, y).to_dict()
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            io.write_json(Path(args.out) / "regression.json", res)
        _print(res)
    elif cmd == "matrix":
        res = cmd_matrix(preset, _out(args, f"runs/{preset.name}"), args.mode, args.densities, args.penetrations,
                         args.seed, args.workers)
        _print({"done": res.done, "failed": {k: v.splitlines()[0] for k, v in res.failed.items()},
                "identities_ok": res.report.identities_ok if res.report else None})
        if res.failed:
            return 1
        if res.report is not None and not res.report.identities_ok:
            return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, InfeasibleScenarioError, CheckpointError, FileNotFoundError, DomainError, RegimeError,
            UnidentifiableError) as exc:
        print(f"mixedflow: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CollisionError, NonFiniteError, NoEquilibriumError) as exc:
        print(f"mixedflow: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
