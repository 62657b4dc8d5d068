"""SQLAlchemy ORM models for the run ledger."""

from datetime import datetime, timezone
import enum

from sqlalchemy import Column, Integer, String, Text, DateTime

from database import Base


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


# ── Enums ──────────────────────────────────────────────────────────────

class RunStatus(str, enum.Enum):
    pending = "pending"
    running = "running"
    completed = "completed"
    failed = "failed"


# ── Run ────────────────────────────────────────────────────────────────

class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String(40), index=True, nullable=False)
    arguments = Column(Text)                 # JSON of the parsed flags
    seed = Column(Integer, nullable=True)
    status = Column(String(20), default=RunStatus.pending.value)
    exit_code = Column(Integer, nullable=True)
    outputs = Column(Text, nullable=True)    # JSON list of written paths
    error_message = Column(Text, nullable=True)
    created_at = Column(DateTime, default=_utcnow, index=True)
    completed_at = Column(DateTime, nullable=True)
