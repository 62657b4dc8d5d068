"""``verify-bounds``: numeric check of the regret chain."""

import logging
from pathlib import Path

from config import BOUND_MARGIN_TOL, resolve_threads
from errors import BoundViolationError, InvalidInputError
from schemas import EnvironmentVerificationModel
from services.cmdp import load_cmdp
from services.info import bound_report
from services.learner import ConceptClassifier, load_classifier
from services.solver import load_solution, solve
from services.transfer import bound_report_model, verify_bounds_suite, verify_solution
from commands.common import common_flags, emit, seed_of, track_run

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser(
        "verify-bounds", parents=[common_flags()], help="check the regret bounds on a file or random instances"
    )
    parser.add_argument("env", nargs="?", default=None, help="environment JSON file")
    parser.add_argument("--random", type=int, default=None, metavar="N", help="check N random instances")
    parser.add_argument("--states", type=int, default=6)
    parser.add_argument("--actions", type=int, default=3)
    parser.add_argument("--contexts", type=int, default=2)
    parser.add_argument("--gamma", type=float, default=0.9)
    parser.add_argument("--n-concepts", type=int, default=2)
    parser.add_argument("--policies", type=int, default=200, help="random abstract policies per classifier")
    parser.add_argument("--margin-tol", type=float, default=BOUND_MARGIN_TOL)
    parser.add_argument("--classifier", default=None, help="classifier JSON checked alongside identity and constant")
    parser.add_argument("--solution", default=None, help="solution JSON to check instead of solving")
    parser.set_defaults(handler=run)


def _suite(args) -> tuple[str, int]:
    report = verify_bounds_suite(
        args.random,
        n_states=args.states,
        n_actions=args.actions,
        n_contexts=args.contexts,
        gamma=args.gamma,
        seed=seed_of(args),
        n_concepts=args.n_concepts,
        n_policies=args.policies,
        margin_tol=args.margin_tol,
        threads=resolve_threads(args.threads),
    )
    return report.to_model().model_dump_json(indent=2), report.total_violations


def _environment(args) -> tuple[str, int]:
    cmdp = load_cmdp(args.env)
    if args.solution:
        solution = load_solution(args.solution)
        if solution.q_values.shape != (cmdp.n_contexts, cmdp.n_states, cmdp.n_actions):
            raise InvalidInputError(f"solution {args.solution} does not match the shape of {args.env}")
    else:
        solution = solve(cmdp)
    solution_violations = verify_solution(cmdp, solution)

    classifiers = {
        "identity": ConceptClassifier.identity(cmdp.n_states),
        "constant": ConceptClassifier.constant(cmdp.n_states),
    }
    if args.classifier:
        classifiers[Path(args.classifier).stem] = load_classifier(args.classifier)
    reports = [
        bound_report(cmdp, solution, classifier, name=name, margin_tol=args.margin_tol)
        for name, classifier in classifiers.items()
    ]
    total = len(solution_violations) + sum(len(r.violations) for r in reports)
    model = EnvironmentVerificationModel(
        environment=str(args.env),
        solution_violations=solution_violations,
        reports=[bound_report_model(r) for r in reports],
        total_violations=total,
    )
    return model.model_dump_json(indent=2), total


def run(args) -> int:
    if (args.env is None) == (args.random is None):
        raise InvalidInputError("give exactly one of an environment file or --random N")
    with track_run("verify-bounds", args) as outputs:
        text, violations = _suite(args) if args.random is not None else _environment(args)
        outputs.append(emit(text, args.out))
        if violations:
            raise BoundViolationError(f"{violations} bound violations; see the report")
    return 0
