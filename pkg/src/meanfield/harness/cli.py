"""Command line entry point: ``meanfield <subcommand> [flags]``.

Study subcommands share ``--config``, ``--seed``, ``--out``, ``--threads``
and ``--quick``; the exit code is 0 exactly when every verdict passes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .. import mv_solver as mv
from .. import particles as P
from .config import KINDS, ConfigError, ExperimentConfig, load
from .results import emit_outputs, preflight, write_csv
from .studies import run_all, run_study

ALIASES = {"lln": "lln-convergence"}
STUDY_COMMANDS = ["lln", *[k for k in KINDS if k != "lln-convergence"]]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", default=None, help="experiment config file (repeatable for 'all')")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="replica worker threads")
    p.add_argument("--quick", action="store_true", help="reduced ladders and replica counts")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanfield", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one particle system and write its trajectory")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--T", type=float, default=1.0)
    sim.add_argument("--dt", type=float, default=1 / 64)
    sim.add_argument("--d", type=int, default=1)
    sim.add_argument("--kernel", default="tanh", choices=sorted(P.KERNELS))
    sim.add_argument("--initial", default="gaussian", choices=["gaussian", "cauchy", "two-cluster"])
    sim.add_argument("--save-count", type=int, default=8)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="results")

    pde = sub.add_parser("solve-pde", help="solve the mean-field equation on a grid and write snapshots")
    pde.add_argument("--initial", default="gaussian", choices=["gaussian", "cauchy", "two-cluster"])
    pde.add_argument("--kernel", default="tanh", choices=sorted(P.KERNELS))
    pde.add_argument("--L", type=float, default=20.0)
    pde.add_argument("--N", type=int, default=800)
    pde.add_argument("--dt", type=float, default=1 / 64)
    pde.add_argument("--T", type=float, default=1.0)
    pde.add_argument("--save-every", type=int, default=8)
    pde.add_argument("--splitting", default="strang", choices=["strang", "lie"])
    pde.add_argument("--out", default="results")

    for name in STUDY_COMMANDS:
        _add_common(sub.add_parser(name, help=f"run the {ALIASES.get(name, name)} study"))
    allp = sub.add_parser("all", help="run every registered study")
    _add_common(allp)
    allp.add_argument("--kinds", default=None, help="comma-separated subset of kinds")
    return ap


def _initial_law(name: str, n: int):
    if name == "two-cluster":
        return P.InitialLaw.deterministic(P.two_cluster_quantiles(n))
    return P.InitialLaw.cauchy() if name == "cauchy" else P.InitialLaw.gaussian()


def cmd_simulate(args) -> int:
    preflight(args.out)
    if args.initial == "two-cluster" and args.d != 1:
        raise ConfigError("the two-cluster start is one-dimensional")
    cfg = P.SimConfig(args.T, args.dt, args.n, args.d, P.equispaced_save_times(args.T, args.save_count),
                      _initial_law(args.initial, args.n), args.seed)
    traj = P.simulate_paths(cfg, P.kernel_by_name(args.kernel, args.d))
    P.write_trajectory_csv(traj, os.path.join(args.out, "trajectory.csv"))
    P.save_increments(traj, os.path.join(args.out, "increments.npy"))
    print(f"wrote {traj.positions.shape[0]} snapshots of {traj.n} particles to {args.out}")
    return 0


def cmd_solve_pde(args) -> int:
    preflight(args.out)
    nu0 = {"gaussian": mv.gaussian_grid, "cauchy": mv.cauchy_grid, "two-cluster": mv.two_cluster_grid}[args.initial](
        args.L, args.N)
    cfg = mv.MVSolverConfig(L=args.L, N=args.N, dt=args.dt, T=args.T, splitting=args.splitting,
                            save_every=args.save_every)
    sol = mv.solve(nu0, P.kernel_by_name(args.kernel), cfg)
    d = nu0.d
    cols = ["t", *(["x"] if d == 1 else [f"x{i}" for i in range(d)]), "density"]
    write_csv([dict(zip(cols, r)) for r in sol.snapshot_rows()], os.path.join(args.out, "snapshots.csv"))
    tails = [{"t": t, "tail_left": float(s.tail[0, 0]), "tail_right": float(s.tail[0, 1]), "grid_mass": s.mass}
             for t, s in zip(sol.times, sol.snapshots)]
    write_csv(tails, os.path.join(args.out, "tail_ledger.csv"))
    print(f"wrote {len(sol.snapshots)} snapshots to {args.out}; max mass drift {sol.max_mass_drift:.2e}")
    return 0


def _configs(args, kinds) -> list[ExperimentConfig]:
    if args.config:
        cfgs = [load(p) for p in args.config]
        if len(kinds) == 1 and any(c.kind != kinds[0] for c in cfgs):
            raise ConfigError(f"config kind does not match subcommand {kinds[0]}")
    else:
        cfgs = [ExperimentConfig.default(k, quick=args.quick) for k in kinds]
    for c in cfgs:
        if args.seed is not None:
            c.seed = args.seed
        if args.out is not None:
            c.out = args.out
    return cfgs


def _report(res) -> None:
    for name, ok in res.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {res.kind}: {name}")
    if not res.verdicts:
        print(f"INFO  {res.kind}: exploratory, no verdicts")


def cmd_study(args, kinds) -> int:
    cfgs = _configs(args, kinds)
    for c in cfgs:
        preflight(c.out)  # fail before any computation
    if args.command == "all":
        report = run_all(cfgs, args.threads)
        for res in report["results"]:
            emit_outputs(res, res.config["out"])
            _report(res)
        for kind, err in report["errors"].items():
            print(f"FAIL  {kind}: {err}")
        summary = {"passed": report["passed"], "errors": report["errors"],
                   "studies": {r.kind: r.passed for r in report["results"]}}
        with open(os.path.join(cfgs[0].out if cfgs else (args.out or "."), "suite.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 0 if report["passed"] else 1
    res = run_study(cfgs[0], args.threads)
    emit_outputs(res, cfgs[0].out)
    _report(res)
    return 0 if res.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "solve-pde":
            return cmd_solve_pde(args)
        if args.command == "all":
            kinds = [k.strip() for k in args.kinds.split(",") if k.strip()] if args.kinds is not None else list(KINDS)
            unknown = [k for k in kinds if k not in KINDS]
            if unknown:
                raise ConfigError(f"unknown kinds: {unknown}")
            if args.config is None and not kinds:
                print("empty manifest: nothing to run")
                return 0
            return cmd_study(args, kinds)
        return cmd_study(args, [ALIASES.get(args.command, args.command)])
    except (ConfigError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
