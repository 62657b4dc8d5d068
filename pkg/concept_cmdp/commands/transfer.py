"""``transfer``: learn concepts on a train CMDP and measure transfer to a test CMDP."""

import logging
from pathlib import Path

from config import resolve_threads
from errors import InvalidInputError
from schemas import ExperimentConfig
from services.cmdp import load_cmdp
from services.learner import classifier_to_json
from services.transfer import curves_to_csv, transfer_experiment
from commands.common import common_flags, emit, read_model, track_run

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "transfer_out"


def register(subparsers):
    parser = subparsers.add_parser("transfer", parents=[common_flags()], help="run a transfer experiment")
    parser.add_argument("train", nargs="?", default=None, help="train environment (default: config train_env)")
    parser.add_argument("test", nargs="?", default=None, help="test environment (default: config test_env)")
    parser.add_argument("--config", default=None, help="ExperimentConfig JSON")
    parser.set_defaults(handler=run)


def _config(args) -> ExperimentConfig:
    config = read_model(ExperimentConfig, args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.format is not None:
        updates["formats"] = [args.format]
    return config.model_copy(update=updates) if updates else config


def run(args) -> int:
    with track_run("transfer", args) as outputs:
        config = _config(args)
        train_path = args.train or config.train_env
        test_path = args.test or config.test_env
        if train_path is None or test_path is None:
            raise InvalidInputError("train and test environments are required (arguments or config)")
        train, test = load_cmdp(train_path), load_cmdp(test_path)

        report = transfer_experiment(train, test, config, threads=resolve_threads(args.threads))
        out_dir = Path(args.out or config.out_dir or DEFAULT_OUT_DIR)
        if "json" in config.formats:
            outputs.append(emit(report.to_model().model_dump_json(indent=2), str(out_dir / "report.json")))
            outputs.append(emit(
                classifier_to_json(report.classifier, config.learner.method, report.train_objective),
                str(out_dir / "classifier.json"),
            ))
        if "csv" in config.formats:
            for name, curves in report.curves.items():
                outputs.append(emit(curves_to_csv(curves), str(out_dir / f"curves_{name}.csv")))

        for name, metrics in report.metrics.items():
            ratios = ", ".join(
                f"{t.fraction:.0%}: {'not reached' if t.ratio is None else f'{t.ratio:.2f}'}"
                for t in metrics.time_to_threshold
            )
            logger.info("%s vs baseline: jumpstart %.4f, asymptotic gap %.4f, J_tt %s",
                        name, metrics.jumpstart, metrics.asymptotic_gap, ratios)
    return 0
