"""``make-env``: write a built-in environment file."""

from config import DEFAULT_GRID_LAYOUT, DEFAULT_GRID_TASKS
from errors import InvalidInputError
from schemas import GridSpec
from services.cmdp import build_context_swap, build_contextual_gridworld, build_random_cmdp, build_rental_car, to_json
from commands.common import common_flags, emit, read_model, seed_of, track_run

KINDS = ("rental-car", "gridworld", "random", "context-swap")


def register(subparsers):
    parser = subparsers.add_parser("make-env", parents=[common_flags()], help="write a built-in environment")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--contexts", default=None, help="rental-car: comma-separated subset of c1,c2")
    parser.add_argument("--long-reward", type=float, default=0.5, help="rental-car: reward of the long route")
    parser.add_argument("--grid", default=None, help="gridworld: GridSpec JSON (default 5x5 plain/seek/avoid)")
    parser.add_argument("--tasks", default=None, help="gridworld: comma-separated task per context")
    parser.add_argument("--states", type=int, default=6)
    parser.add_argument("--actions", type=int, default=3)
    parser.add_argument("--n-contexts", type=int, default=2)
    parser.add_argument("--gamma", type=float, default=0.9)
    parser.set_defaults(handler=run)


def _grid(args) -> GridSpec:
    spec = read_model(GridSpec, args.grid, GridSpec(layout=DEFAULT_GRID_LAYOUT, tasks=DEFAULT_GRID_TASKS))
    if args.tasks:
        try:
            spec = GridSpec.model_validate({**spec.model_dump(), "tasks": args.tasks.split(",")})
        except ValueError as exc:
            raise InvalidInputError(f"invalid --tasks {args.tasks!r}: {exc}") from exc
    return spec


def run(args) -> int:
    with track_run("make-env", args) as outputs:
        if args.kind == "rental-car":
            contexts = tuple(args.contexts.split(",")) if args.contexts else ("c1", "c2")
            cmdp = build_rental_car(reward_long_route=args.long_reward, contexts=contexts)
        elif args.kind == "gridworld":
            cmdp = build_contextual_gridworld(_grid(args))
        elif args.kind == "random":
            cmdp = build_random_cmdp(args.states, args.actions, args.n_contexts, args.gamma, seed_of(args))
        else:
            cmdp = build_context_swap()
        outputs.append(emit(to_json(cmdp), args.out))
    return 0
