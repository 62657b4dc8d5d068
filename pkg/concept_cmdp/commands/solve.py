"""``solve``: exact solution of an environment file."""

import csv
import io

from config import SOLVER_TOL, resolve_threads
from errors import InvalidInputError
from services.cmdp import load_cmdp
from services.solver import Solution, solution_to_json, solve
from commands.common import common_flags, emit, track_run


def register(subparsers):
    parser = subparsers.add_parser("solve", parents=[common_flags()], help="solve a CMDP exactly")
    parser.add_argument("env", help="environment JSON file")
    parser.add_argument("--context", type=int, default=None, help="solve a single context")
    parser.add_argument("--tau", type=float, default=None, help="Boltzmann temperature (default 0.05 ||r||)")
    parser.add_argument("--occupancy", choices=["soft", "greedy"], default="soft")
    parser.add_argument("--tol", type=float, default=SOLVER_TOL)
    parser.set_defaults(handler=run)


def values_csv(solution: Solution) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["context", "state", "value", "occupancy"])
    for c, (values, occupancy) in enumerate(zip(solution.v_values, solution.occupancy)):
        for s, (v, p) in enumerate(zip(values, occupancy)):
            writer.writerow([c, s, repr(float(v)), repr(float(p))])
    return buffer.getvalue()


def run(args) -> int:
    with track_run("solve", args) as outputs:
        cmdp = load_cmdp(args.env)
        if args.context is not None:
            if not 0 <= args.context < cmdp.n_contexts:
                raise InvalidInputError(f"--context {args.context} out of range [0, {cmdp.n_contexts})")
            cmdp = cmdp.restrict_contexts([args.context])
        solution = solve(
            cmdp, tau=args.tau, tol=args.tol, occupancy_policy=args.occupancy,
            threads=resolve_threads(args.threads),
        )
        text = values_csv(solution) if args.format == "csv" else solution_to_json(solution)
        outputs.append(emit(text, args.out))
    return 0
