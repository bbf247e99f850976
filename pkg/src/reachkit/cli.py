"""reachkit command line.

    reachkit bounds  CONFIG [--grid N] [--guard G]
    reachkit check   CONFIG [--grid N] [--lambda-override L]
    reachkit sim     CONFIG --x0 a,b [--seed S] [--out traj.csv] [--closed-loop]
    reachkit batch   CONFIG --runs N [--seed S]
    reachkit perturb CONFIG --x0 a,b [--dbar D] [--kind random|constant|sinusoid]

CONFIG is a JSON file or the name of a bundled config (pendulum, cruise,
pendulum_estimate, cruise_estimate).  Exit status: 0 on PASS / all runs
confirmed, 1 on a negative or undecided finding, 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import certify, simulate
from .bounds import CONSTANTS, DEFAULT_GUARD, default_resolution, estimate_all, make_grid, resolve_bounds
from .expr import ExprError
from .model import SpecError, SystemSpec, load_spec

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("reachkit")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(",") if v != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


def _nonneg(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachkit", description="Reach-avoid certification and sampled-data simulation.")
    p.add_argument("--version", action="version", version=f"reachkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON config path or bundled config name")
    common.add_argument("--out", help="write the main output here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--delta", type=_nonneg, help="override the sampling period")
    common.add_argument("--epsilon", type=_nonneg, help="override the measurement error bound")
    common.add_argument("--lambda-override", dest="lam", type=_positive(float), help="override lambda")
    common.add_argument("--verbose", "-v", action="store_true")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--grid", type=_positive(int), help="grid points per axis (default depends on dimension)")
    grid.add_argument("--guard", type=_positive(float), default=None, help="guard factor for estimated constants")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--T", dest="T", type=_positive(float), help="horizon (default 50 * diam(domain box) / alpha)")
    sim.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("bounds", parents=[common, grid], help="estimate alpha, beta, gamma, xi")
    s.add_argument("--no-polish", action="store_true", help="report raw grid maxima only")

    sub.add_parser("check", parents=[common, grid], help="scan the sampled-data condition")

    s = sub.add_parser("sim", parents=[common, sim], help="simulate one trajectory")
    s.add_argument("--x0", type=_floats, required=True)
    s.add_argument("--substeps", type=_positive(int), default=simulate.DEFAULT_SUBSTEPS)
    s.add_argument("--noise", choices=simulate.NOISE_MODELS, default="ball")
    s.add_argument("--closed-loop", action="store_true", help="continuous feedback reference instead of ZOH")
    s.add_argument("--dt", type=_positive(float), default=1e-4, help="step for --closed-loop")

    s = sub.add_parser("batch", parents=[common, sim], help="Monte Carlo runs from states sampled in C")
    s.add_argument("--runs", type=_positive(int), default=100)
    s.add_argument("--substeps", type=_positive(int), default=simulate.DEFAULT_SUBSTEPS)
    s.add_argument("--noise", choices=simulate.NOISE_MODELS, default="ball")

    s = sub.add_parser("perturb", parents=[common, grid, sim], help="simulate with a bounded input perturbation")
    s.add_argument("--x0", type=_floats, required=True)
    s.add_argument("--dbar", type=_nonneg, help="perturbation bound (default: certified dbar)")
    s.add_argument("--kind", choices=("random", "constant", "sinusoid"), default="random")
    s.add_argument("--vector", type=_floats, default=())
    s.add_argument("--amplitude", type=_floats, default=())
    s.add_argument("--frequency", type=_floats, default=())
    s.add_argument("--dwell", type=_positive(float), default=0.05)
    s.add_argument("--dt", type=_positive(float), default=1e-3)
    return p


def _join_negative_values(argv: list[str]) -> list[str]:
    """Let ``--x0 -0.4,0.3`` through argparse, which would take the value for a flag."""
    out, i = [], 0
    flags = {"--x0", "--vector", "--amplitude", "--frequency"}
    while i < len(argv):
        a = argv[i]
        if a in flags and i + 1 < len(argv) and argv[i + 1].startswith("-") and argv[i + 1][1:2].replace(".", "0").isdigit():
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load(args) -> tuple[SystemSpec, dict]:
    path = Path(args.config)
    if not path.exists() and args.config not in ("pendulum", "cruise", "pendulum_estimate", "cruise_estimate"):
        raise UsageError(f"config file not found: {args.config}")
    spec = load_spec(args.config)
    overrides = {}
    if args.delta is not None:
        overrides["delta"] = args.delta
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.lam is not None:
        overrides["lam"] = args.lam
    if overrides:
        spec = spec.replace(**overrides)
    echo = {"path": str(args.config), "name": spec.name, "source": spec.source, "overrides": overrides}
    return spec, echo


def _x0(spec: SystemSpec, x0: tuple) -> tuple:
    if len(x0) != spec.n:
        raise UsageError(f"--x0 has {len(x0)} entries, {spec.name} has {spec.n} states")
    hd, hc, _ = spec._sets_fn(x0)
    if not (hd > 0 and hc > 0):
        raise UsageError(f"--x0 {list(x0)} is not in C (h_C = {hc:.6g})")
    return x0


def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _grid_arg(spec, args) -> int:
    return args.grid if args.grid is not None else default_resolution(spec.n)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    spec, echo = _load(args)
    guard = DEFAULT_GUARD if args.guard is None else args.guard
    res = _grid_arg(spec, args)
    raw, details, grid = estimate_all(spec, make_grid(spec, res), polish=not args.no_polish)
    override = dict(spec.bounds_override or {})
    table = {}
    for c in CONSTANTS:
        row = {"value": guard * raw[c], "raw": raw[c], "provenance": "estimated"}
        if c in override:
            row["override"] = override[c]
            row["ratio_raw_to_override"] = raw[c] / override[c] if override[c] else None
        table[c] = row
    report = {
        "command": "bounds",
        "config": echo,
        "settings": {"grid": list(grid.resolution), "guard": guard, "polish": not args.no_polish,
                     "grid_points_in_D": len(grid)},
        "constants": table,
        "details": details,
    }
    if args.format == "csv":
        _emit(args, _rows_csv(
            ["constant", "value", "raw", "override", "ratio_raw_to_override"],
            [[c, r["value"], r["raw"], r.get("override", ""), r.get("ratio_raw_to_override", "")]
             for c, r in table.items()],
        ))
    else:
        _emit(args, _dump(report))
    return EXIT_OK


def _bounds_for(spec, args):
    guard = DEFAULT_GUARD if args.guard is None else args.guard
    grid = None
    missing = [c for c in CONSTANTS if c not in (spec.bounds_override or {})]
    if missing:
        grid = make_grid(spec, _grid_arg(spec, args))
    return resolve_bounds(spec, grid, guard_factor=guard)


def cmd_check(args) -> int:
    spec, echo = _load(args)
    bnd = _bounds_for(spec, args)
    rep = certify.scan_condition(spec, bnd, _grid_arg(spec, args))
    report = {
        "command": "check",
        "config": echo,
        "settings": {"grid": _grid_arg(spec, args), "guard": bnd.guard_factor,
                     "lambda": spec.lam, "delta": spec.delta, "epsilon": spec.epsilon},
        **rep.to_json(),
    }
    if args.format == "csv":
        flat = {k: v for k, v in report.items() if not isinstance(v, (dict, list))}
        _emit(args, _rows_csv(["key", "value"], list(flat.items())))
    else:
        _emit(args, _dump(report))
    log.info("verdict %s", rep.verdict)
    return EXIT_OK if rep.verdict == certify.PASS else EXIT_NEGATIVE


def _outcome_code(outcome) -> int:
    return EXIT_OK if outcome.kind == simulate.GOAL_CONFIRMED else EXIT_NEGATIVE


def _trajectory_outputs(args, spec, echo, traj, settings) -> int:
    report = {"command": args.command, "config": echo, "settings": settings, **traj.summary()}
    if args.format == "csv":
        _emit(args, simulate.trajectory_csv(traj, spec))
    else:
        if args.out:
            with open(args.out, "w", newline="") as fh:
                simulate.trajectory_csv(traj, spec, fh)
            report["csv"] = args.out
        sys.stdout.write(_dump(report))
    return _outcome_code(traj.outcome)


def cmd_sim(args) -> int:
    spec, echo = _load(args)
    x0 = _x0(spec, args.x0)
    th = simulate.default_thresholds(spec)
    T = simulate.default_horizon(spec) if args.T is None else args.T
    settings = {"x0": list(x0), "T": T, "seed": args.seed, "thresholds": th.to_json()}
    if args.closed_loop:
        settings.update(mode="closed_loop", dt=args.dt)
        traj = simulate.simulate_closed_loop(spec, x0, T, args.dt, th)
    else:
        if not spec.delta > 0:
            raise UsageError("sampled simulation needs delta > 0")
        settings.update(mode="sampled", substeps=args.substeps, noise=args.noise, delta=spec.delta,
                        epsilon=spec.epsilon)
        traj = simulate.simulate_sampled(spec, x0, T, args.substeps, args.noise, args.seed, th)
    return _trajectory_outputs(args, spec, echo, traj, settings)


def cmd_batch(args) -> int:
    spec, echo = _load(args)
    if not spec.delta > 0:
        raise UsageError("batch simulation needs delta > 0")
    stats = simulate.batch(spec, args.runs, args.seed, args.T, args.substeps, args.noise)
    report = {"command": "batch", "config": echo,
              "settings": {"runs": args.runs, "seed": args.seed, "substeps": args.substeps, "noise": args.noise},
              **stats}
    if args.format == "csv":
        _emit(args, _rows_csv(
            ["run", "seed", *[f"x0_{i + 1}" for i in range(spec.n)], "kind", "confirm_time", "violation_time"],
            [[r["run"], r["seed"], *r["x0"], r["kind"], r["confirm_time"], r["violation_time"]]
             for r in stats["per_run"]],
        ))
    else:
        _emit(args, _dump(report))
    return EXIT_OK if stats["confirmed"] == stats["runs"] else EXIT_NEGATIVE


def cmd_perturb(args) -> int:
    spec, echo = _load(args)
    x0 = _x0(spec, args.x0)
    dbar = args.dbar
    if dbar is None:
        dbar, _ = certify.margin(_bounds_for(spec, args), spec)
    if args.kind == "constant" and args.vector and len(args.vector) != spec.m:
        raise UsageError(f"--vector needs {spec.m} entries")
    pert = simulate.PerturbationSpec(
        dbar=dbar, kind=args.kind, vector=args.vector, amplitude=args.amplitude,
        frequency=args.frequency, dwell=args.dwell, seed=args.seed,
    )
    T = simulate.default_horizon(spec) if args.T is None else args.T
    traj = simulate.simulate_perturbed(spec, x0, pert, T, args.dt)
    settings = {"x0": list(x0), "T": T, "dt": args.dt, "seed": args.seed, "dbar": dbar, "kind": args.kind,
                "vector": list(args.vector), "amplitude": list(args.amplitude),
                "frequency": list(args.frequency), "dwell": args.dwell}
    return _trajectory_outputs(args, spec, echo, traj, settings)


COMMANDS = {"bounds": cmd_bounds, "check": cmd_check, "sim": cmd_sim, "batch": cmd_batch, "perturb": cmd_perturb}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SpecError, ExprError, simulate.PreconditionError, FileNotFoundError,
            IsADirectoryError) as err:
        print(f"reachkit: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except simulate.SimulationError as err:
        print(f"reachkit: simulation failed: {err}", file=sys.stderr)
        return EXIT_NEGATIVE


if __name__ == "__main__":
    sys.exit(main())
