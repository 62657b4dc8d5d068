"""``trmc``: Trust Region Monte Carlo over a fixed concept classifier."""

from services.cmdp import load_cmdp
from services.learner import load_classifier
from services.solver import evaluate_policy
from services.transfer import curve_summary, curves_to_csv
from services.trmc import run_trmc
from schemas import TRMCConfig, TRMCReportModel
from commands.common import common_flags, emit, read_model, seed_of, track_run


def register(subparsers):
    parser = subparsers.add_parser("trmc", parents=[common_flags()], help="learn over concepts with TRMC")
    parser.add_argument("env", help="environment JSON file")
    parser.add_argument("--classifier", required=True, help="classifier JSON")
    parser.add_argument("--config", default=None, help="TRMCConfig JSON")
    parser.add_argument("--episodes", type=int, default=None)
    parser.add_argument("--epsilon", type=float, default=None, help="KL trust region radius")
    parser.set_defaults(handler=run)


def _config(args) -> TRMCConfig:
    config = read_model(TRMCConfig, args.config)
    updates = {"seed": seed_of(args, config.seed)}
    if args.episodes is not None:
        updates["episode_budget"] = args.episodes
    if args.epsilon is not None:
        updates["epsilon_mc"] = args.epsilon
    return TRMCConfig.model_validate({**config.model_dump(), **updates})


def run(args) -> int:
    with track_run("trmc", args) as outputs:
        cmdp = load_cmdp(args.env)
        classifier = load_classifier(args.classifier)
        config = _config(args)
        state, curve = run_trmc(cmdp, classifier, config)
        if args.format == "csv":
            outputs.append(emit(curves_to_csv([curve]), args.out))
            return 0
        report = TRMCReportModel(
            seed=config.seed,
            episodes=len(curve),
            n_updates=state.n_updates,
            entropy_target=state.entropy_target,
            max_kl_step=max(state.kl_history) if state.kl_history else None,
            final_expected_return=evaluate_policy(cmdp, curve.final_policy),
            policy=state.policy.tolist(),
            q_table=state.q_table.tolist(),
            visit_counts=state.visit_counts.tolist(),
            curve=curve_summary([curve]),
        )
        outputs.append(emit(report.model_dump_json(indent=2), args.out))
    return 0
