"""Command-line front end.

Exit codes: 0 success, 2 invalid input (schema, dimensions, structure),
3 the numerics did not deliver (solver not converged, no feasible grid
point, failed step), 4 file system errors. Every run writes
``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys as _sys

import numpy as np
import scipy

from . import __version__
from .configio import (
    _plain,
    load_problem,
    write_report_json,
    write_trajectory_csv,
)
from .dissipativity import (
    dissipation_check,
    estimate_manifold_constant,
    prop2_counterexample,
    turnpike_scan,
)
from .errors import DegenerateSampling, NoFeasibleGridPoint, PHError, ValidationError
from .ocp import CONVERGED, brute_force_oracle, solve, steady_state_at, steady_state_solve
from .stepper import Scheme, simulate

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

COMMANDS = {
    "simulate": "simulate the inputs listed in diagnostics.inputs (zeros if absent)",
    "solve": "solve the optimal control problem",
    "steady": "solve the steady-state problem from several starts",
    "scan": "solve over several horizons and record turnpike statistics",
    "check": "check the dissipation inequality along a trajectory",
    "oracle": "brute-force the optimal input over a grid (small N*m only)",
    "counterexample": "one-step midpoint transfer violating strict dissipativity",
}


class _Failure(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _horizons(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return values


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtph", description="Discrete-time port-Hamiltonian optimal control and turnpike diagnostics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--problem", metavar="PATH", required=name != "counterexample",
                       help="problem file (JSON)")
        p.add_argument("--scheme", choices=[s.value for s in Scheme], help="override ocp.scheme")
        p.add_argument("-N", type=_positive_int, help="override the horizon ocp.N")
        p.add_argument("--h", type=_positive_float, help="override the step size ocp.h")
        p.add_argument("--horizons", type=_horizons, metavar="LIST",
                       help="comma-separated horizons for scan (default: diagnostics.horizons)")
        p.add_argument("--seed", type=int, default=0, help="seed for multi-start and sampling (default 0)")
        p.add_argument("--out", metavar="DIR", help="output directory (default: output.dir or ./out)")
        p.add_argument("--grid", type=_positive_int, default=21, help="oracle grid points per input channel")
        p.add_argument("--tolerance", type=_positive_float, default=1e-6,
                       help="oracle terminal tolerance (default 1e-6)")
    return parser


def _problem(args):
    problem = load_problem(args.problem)
    ocp = problem.ocp
    changes = {}
    if args.N is not None:
        changes["N"] = args.N
    if args.h is not None:
        changes["h"] = args.h
    if args.scheme is not None:
        changes["scheme"] = args.scheme
    changes["options"] = dataclasses.replace(ocp.options, seed=args.seed)
    problem.ocp = dataclasses.replace(ocp, **changes)
    problem.diagnostics.seed = args.seed
    return problem


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class _Run:
    def __init__(self, args, out):
        self.args = args
        self.out = out
        self.files = []
        self.summary = {}

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)


def _cmd_simulate(run, problem):
    ocp = problem.ocp
    U = problem.diagnostics.inputs
    if U is None:
        U = np.zeros((ocp.N, problem.sys.m))
    traj = simulate(problem.sys, ocp.x0, U, ocp.scheme, ocp.h)
    write_trajectory_csv(traj, run.path("trajectory.csv"), problem.manifold())
    rec = {"kind": "simulation", "scheme": ocp.scheme.value, "h": ocp.h, "N": int(traj.N),
           "cost": traj.cost, "energy_change": float(traj.energies[-1] - traj.energies[0]),
           "dissipated": float(np.sum(traj.dissipated)),
           "max_energy_residual": float(np.max(np.abs(traj.residuals), initial=0.0)),
           "final_state": traj.states[-1].tolist()}
    write_report_json(rec, run.path("simulation.json"))
    run.summary = {"cost": traj.cost, "N": int(traj.N)}
    return EXIT_OK


def _cmd_solve(run, problem):
    sol = solve(problem.ocp)
    write_trajectory_csv(sol.trajectory, run.path("trajectory.csv"), problem.manifold())
    write_report_json(sol, run.path("solution.json"))
    run.summary = {"status": sol.status, "cost": sol.cost, "terminal_defect": sol.terminal_defect}
    if sol.status != CONVERGED:
        raise _Failure(EXIT_NUMERIC, f"solver finished with status {sol.status} "
                                     f"(terminal defect {sol.terminal_defect:.3e}, KKT {sol.kkt_residual:.3e})")
    return EXIT_OK


def _steady_dict(s):
    return {"x_bar": s.x_bar.tolist(), "u_bar": s.u_bar.tolist(), "cost": s.cost, "residual": s.residual,
            "dissipation": s.dissipation, "prop4_gap": s.prop4_gap, "s_residual": s.s_residual,
            "in_S": s.in_S, "converged": s.converged, "message": s.message}


def _cmd_steady(run, problem):
    states = steady_state_solve(problem.sys, problem.ocp.h, seed=problem.diagnostics.seed)
    origin = steady_state_at(problem.sys, np.zeros(problem.sys.n), problem.ocp.h)
    rec = {"kind": "steady_states", "h": problem.ocp.h, "origin": _steady_dict(origin),
           "starts": [_steady_dict(s) for s in states]}
    write_report_json(rec, run.path("steady_states.json"))
    ok = [s for s in states if s.converged]
    run.summary = {"converged": len(ok), "starts": len(states)}
    if not ok:
        raise _Failure(EXIT_NUMERIC, "no start converged to a steady state")
    return EXIT_OK


def _cmd_scan(run, problem):
    horizons = run.args.horizons or problem.diagnostics.horizons
    spec = problem.manifold()
    scan = turnpike_scan(problem.ocp, horizons, spec, warm_start=problem.diagnostics.warm_start)
    for N, sol in sorted(scan.solutions.items()):
        write_trajectory_csv(sol.trajectory, run.path(f"trajectory_N{N}.csv"), spec)
    write_report_json(scan, run.path("scan.json"))
    bad = [r.N for r in scan.horizons if r.status != CONVERGED]
    run.summary = {"horizons": list(horizons), "failed": bad}
    if bad:
        raise _Failure(EXIT_NUMERIC, f"horizons without a converged solution: {bad}")
    return EXIT_OK


def _cmd_check(run, problem):
    ocp = problem.ocp
    spec = problem.manifold()
    if problem.diagnostics.inputs is not None:
        traj = simulate(problem.sys, ocp.x0, problem.diagnostics.inputs, ocp.scheme, ocp.h)
        source = "supplied inputs"
    else:
        sol = solve(ocp)
        if sol.status != CONVERGED:
            raise _Failure(EXIT_NUMERIC, f"solver finished with status {sol.status}")
        traj = sol.trajectory
        source = "optimal control"
    report = dissipation_check(traj, spec)
    rec = report.as_dict()
    rec["trajectory_source"] = source
    try:
        est = estimate_manifold_constant(spec, problem.diagnostics.sampling_box, problem.diagnostics.n_samples,
                                         seed=problem.diagnostics.seed)
        rec["sampled_constant"] = est.as_dict()
    except DegenerateSampling as exc:
        rec["sampled_constant"] = {"error": str(exc)}
    write_trajectory_csv(traj, run.path("trajectory.csv"), spec)
    write_report_json(rec, run.path("dissipation.json"))
    run.summary = {"verdict": report.verdict, "c_hat": report.c_hat}
    return EXIT_OK


def _cmd_oracle(run, problem):
    try:
        sol = brute_force_oracle(problem.ocp, run.args.grid, run.args.tolerance)
    except NoFeasibleGridPoint as exc:
        raise _Failure(EXIT_NUMERIC, str(exc)) from None
    write_trajectory_csv(sol.trajectory, run.path("trajectory.csv"), problem.manifold())
    rec = {"kind": "oracle", "grid": run.args.grid, "terminal_tolerance": run.args.tolerance,
           "cost": sol.cost, "terminal_defect": sol.terminal_defect, "inputs": sol.inputs.tolist()}
    write_report_json(rec, run.path("oracle.json"))
    run.summary = {"cost": sol.cost}
    return EXIT_OK


def _cmd_counterexample(run, problem):
    if problem is None:
        ce = prop2_counterexample()
    else:
        ce = prop2_counterexample(problem.sys, h=problem.ocp.h, c_hat=problem.diagnostics.c_hat or 1.0)
    write_trajectory_csv(ce.trajectory, run.path("trajectory.csv"), ce.manifold)
    write_report_json(ce, run.path("counterexample.json"))
    run.summary = {"verdict": ce.report.verdict}
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "steady": _cmd_steady,
    "scan": _cmd_scan,
    "check": _cmd_check,
    "oracle": _cmd_oracle,
    "counterexample": _cmd_counterexample,
}


def _manifest(run, problem, code, message):
    args = run.args
    rec = {
        "command": args.command,
        "arguments": {k: getattr(args, k) for k in
                      ("problem", "scheme", "N", "h", "horizons", "seed", "grid", "tolerance")},
        "problem_sha256": _sha256(args.problem) if args.problem and os.path.exists(args.problem) else None,
        "problem_digest": problem.digest if problem is not None else None,
        "seeds": {"solver": args.seed, "sampling": args.seed},
        "versions": {"dtph": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "exit_code": code,
        "message": message,
        "summary": run.summary,
        "outputs": {name: _sha256(os.path.join(run.out, name)) for name in run.files
                    if os.path.exists(os.path.join(run.out, name))},
    }
    with open(os.path.join(run.out, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_plain(rec), indent=2) + "\n")


def run(argv=None):
    """Parse ``argv``, execute one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for bad usage
        return int(exc.code or 0)
    problem = None
    code, message = EXIT_OK, ""
    try:
        if args.problem is not None:
            problem = _problem(args)
        out = args.out or (problem.output.get("dir") if problem is not None else None) or "out"
        os.makedirs(out, exist_ok=True)
    except (ValidationError, ValueError) as exc:
        print(f"dtph: invalid input: {exc}", file=_sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"dtph: cannot read or create {exc.filename or ''}: {exc.strerror or exc}", file=_sys.stderr)
        return EXIT_IO
    r = _Run(args, out)
    try:
        code = _HANDLERS[args.command](r, problem)
    except _Failure as exc:
        code, message = exc.code, str(exc)
    except ValidationError as exc:
        code, message = EXIT_INVALID, f"invalid input: {exc}"
    except OSError as exc:
        code, message = EXIT_IO, f"file error: {exc}"
    except (PHError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code, message = EXIT_NUMERIC, f"numerical failure: {type(exc).__name__}: {exc}"
    try:
        _manifest(r, problem, code, message)
    except OSError as exc:
        print(f"dtph: cannot write manifest: {exc}", file=_sys.stderr)
        return EXIT_IO
    if message:
        print(f"dtph: {message}", file=_sys.stderr)
    summary = ", ".join(f"{k}={v}" for k, v in r.summary.items())
    print(f"{args.command}: {summary}" if summary else args.command)
    return code


def main():
    _sys.exit(run())
