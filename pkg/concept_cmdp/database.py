"""SQLAlchemy setup for the run ledger."""

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker, DeclarativeBase, Session

import config

_engine: Engine | None = None
_session_factory: sessionmaker | None = None


class Base(DeclarativeBase):
    pass


def configure(url: str | None = None) -> None:
    """(Re)bind the ledger to a database URL and create missing tables."""
    global _engine, _session_factory
    url = url or config.DATABASE_URL
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    _engine = create_engine(url, connect_args=connect_args)
    _session_factory = sessionmaker(autocommit=False, autoflush=False, bind=_engine)
    init_db()


def get_engine() -> Engine:
    if _engine is None:
        configure()
    return _engine


def get_db() -> Session:
    """Open a session on the configured ledger."""
    if _session_factory is None:
        configure()
    return _session_factory()


def init_db():
    """Create all tables."""
    import models  # noqa: F401 – ensure models are registered
    Base.metadata.create_all(bind=get_engine())
