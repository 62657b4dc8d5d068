"""
concept-cmdp command-line entry point.

Usage: python main.py <command> [options]
"""

import argparse
import logging
import sys

import coloredlogs

from config import LOG_FORMAT, LOG_LEVEL
from errors import ConceptCMDPError

# ── Import commands ────────────────────────────────────────────────────
from commands import learn, make_env, report, solve, transfer, trmc_cmd, verify

COMMANDS = (solve, learn, verify, trmc_cmd, transfer, report, make_env)

logger = logging.getLogger("concept_cmdp")


# ── Parser ─────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concept-cmdp",
        description="Concept learning, bound verification and transfer for tabular contextual MDPs",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def setup_logging(level: str | None):
    coloredlogs.install(level=(level or LOG_LEVEL).upper(), fmt=LOG_FORMAT, stream=sys.stderr)


# ── Entry point ────────────────────────────────────────────────────────

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except ConceptCMDPError as exc:
        logger.error("%s: %s", type(exc).__name__, exc.detail)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
