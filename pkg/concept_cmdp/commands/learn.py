"""``learn-concepts``: learn a concept classifier on an environment."""

import logging

from config import resolve_threads
from errors import CapabilityError
from schemas import LearnConfig
from services.cmdp import load_cmdp
from services.info import build_joint, context_free_mi
from services.learner import (
    baseline_context_free, baseline_likelihood, classifier_to_json, collect_triples, learn_exhaustive,
    learn_factored, learn_gradient, learn_local_search, objective, random_likelihood_policy,
)
from services.solver import solve
from commands.common import common_flags, emit, parse_sizes, read_model, seed_of, track_run

logger = logging.getLogger(__name__)

METHODS = ("exhaustive", "local", "gradient", "likelihood", "context-free")


def register(subparsers):
    parser = subparsers.add_parser("learn-concepts", parents=[common_flags()], help="learn concepts")
    parser.add_argument("env", help="environment JSON file")
    parser.add_argument("--n-concepts", type=int, default=2)
    parser.add_argument("--factor-sizes", default=None, help="comma-separated factor sizes, e.g. 3,3")
    parser.add_argument("--method", choices=METHODS, default="gradient")
    parser.add_argument("--config", default=None, help="LearnConfig JSON")
    parser.add_argument("--restarts", type=int, default=None)
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--triples-episodes", type=int, default=200, help="episodes sampled for the likelihood metric")
    parser.set_defaults(handler=run)


def _config(args) -> LearnConfig:
    config = read_model(LearnConfig, args.config)
    updates = {"seed": seed_of(args, config.seed)}
    if args.restarts is not None:
        updates["restarts"] = args.restarts
    if args.max_iters is not None:
        updates["max_iters"] = args.max_iters
    return LearnConfig.model_validate({**config.model_dump(), **updates})


def run(args) -> int:
    with track_run("learn-concepts", args) as outputs:
        config = _config(args)
        factor_sizes = parse_sizes(args.factor_sizes) if args.factor_sizes else None
        if factor_sizes and args.method != "gradient":
            raise CapabilityError(f"--factor-sizes is only supported by the gradient method, not {args.method}")

        cmdp = load_cmdp(args.env)
        solution = solve(cmdp)
        k = args.n_concepts
        if factor_sizes:
            classifier, _ = learn_factored(cmdp, solution, factor_sizes, config)
        elif args.method == "exhaustive":
            classifier, _ = learn_exhaustive(cmdp, solution, k)
        elif args.method == "local":
            classifier, _ = learn_local_search(cmdp, solution, k, config, threads=resolve_threads(args.threads))
        elif args.method == "gradient":
            classifier, _ = learn_gradient(cmdp, solution, k, config)
        elif args.method == "context-free":
            classifier, value = baseline_context_free(cmdp, solution, k, config)
            logger.info("Context-free objective %.6g", value)
        else:
            triples = collect_triples(cmdp, solution.soft_optimal, args.triples_episodes, config.seed)
            fixed = random_likelihood_policy(cmdp.n_contexts, k, cmdp.n_actions, config.seed)
            classifier, log_likelihood = baseline_likelihood(triples, k, fixed, config, n_states=cmdp.n_states)
            logger.info("Log-likelihood %.6g over %d triples", log_likelihood, len(triples))

        value = objective(cmdp, solution, classifier)
        logger.info(
            "Learned %d concepts (%s): objective %.6g, context-free %.6g",
            classifier.n_concepts, args.method, value, context_free_mi(build_joint(cmdp, solution, classifier)),
        )
        outputs.append(emit(classifier_to_json(classifier, args.method, value), args.out))
    return 0
