"""Shared command plumbing: global flags, output writing and the run ledger."""

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from sqlalchemy.exc import SQLAlchemyError

from database import get_db
from errors import ConceptCMDPError, InvalidInputError
from models import Run, RunStatus

logger = logging.getLogger(__name__)


def common_flags() -> argparse.ArgumentParser:
    """Parent parser with the flags every command accepts."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=None, help="experiment seed (default 0)")
    parent.add_argument("--out", default=None, help="output file or directory (default stdout)")
    parent.add_argument("--threads", type=int, default=None, help="worker threads; CONCEPT_CMDP_THREADS wins")
    parent.add_argument("--format", choices=["json", "csv"], default=None, dest="format")
    parent.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)
    return parent


def seed_of(args: argparse.Namespace, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse sizes {text!r}: expected comma-separated integers") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise InvalidInputError(f"sizes must be positive integers, got {text!r}")
    return sizes


def read_model(model, path: Optional[str], default=None):
    """Parse a pydantic config file; a missing path gives ``default``."""
    if path is None:
        return default if default is not None else model()
    try:
        return model.model_validate_json(Path(path).read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise InvalidInputError(f"invalid config {path}: {exc}") from exc


def emit(text: str, out: Optional[str]) -> str:
    """Write ``text`` to ``out`` or stdout; returns where it went."""
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return "-"
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info("Wrote %s", path)
    return str(path)


def _arguments_json(args: argparse.Namespace) -> str:
    plain = {k: v for k, v in vars(args).items() if not callable(v)}
    return json.dumps(plain, sort_keys=True, default=str)


class _Ledger:
    """Run bookkeeping; database trouble is logged, never fatal to the command."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.db = None
        self.run = None
        try:
            self.db = get_db()
            self.run = Run(
                command=command,
                arguments=_arguments_json(args),
                seed=args.seed,
                status=RunStatus.pending.value,
            )
            self.db.add(self.run)
            self.db.commit()
        except SQLAlchemyError as exc:
            logger.warning("Run ledger unavailable: %s", exc)
            self.run = None

    def update(self, **fields):
        if self.run is None:
            return
        try:
            for key, value in fields.items():
                setattr(self.run, key, value)
            self.db.commit()
        except SQLAlchemyError as exc:
            logger.warning("Could not update run ledger: %s", exc)

    def close(self):
        if self.db is not None:
            self.db.close()


@contextmanager
def track_run(command: str, args: argparse.Namespace):
    """Record the command in the ledger; yields the list of written outputs."""
    ledger = _Ledger(command, args)
    ledger.update(status=RunStatus.running.value)
    outputs: list[str] = []
    try:
        yield outputs
    except ConceptCMDPError as exc:
        ledger.update(
            status=RunStatus.failed.value, exit_code=exc.exit_code, error_message=exc.detail,
            outputs=json.dumps(outputs), completed_at=datetime.now(timezone.utc),
        )
        raise
    except Exception as exc:
        ledger.update(
            status=RunStatus.failed.value, exit_code=1, error_message=str(exc),
            outputs=json.dumps(outputs), completed_at=datetime.now(timezone.utc),
        )
        raise
    else:
        ledger.update(
            status=RunStatus.completed.value, exit_code=0,
            outputs=json.dumps(outputs), completed_at=datetime.now(timezone.utc),
        )
    finally:
        ledger.close()
