"""
Run history in a relational store (SQLite by default).
"""
import json
import logging
from datetime import datetime
from typing import Optional

from sqlalchemy import Column, DateTime, Integer, String, Text, create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import Session, sessionmaker

from config import get_settings

logger = logging.getLogger(__name__)

Base = declarative_base()

_engine = None
_SessionLocal = None


class RunRecord(Base):
    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True, index=True)
    problem = Column(String(64), index=True)
    method = Column(String(64))
    status = Column(String(32))
    iterations = Column(Integer)
    report = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)


def init_db(database_url: Optional[str] = None):
    """(Re)bind the module to a database and create the tables."""
    global _engine, _SessionLocal
    url = database_url or get_settings().database_url
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    _engine = create_engine(url, connect_args=connect_args)
    _SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=_engine)
    Base.metadata.create_all(bind=_engine)
    return _engine


def session_factory() -> sessionmaker:
    if _SessionLocal is None:
        init_db()
    return _SessionLocal


def get_db():
    db = session_factory()()
    try:
        yield db
    finally:
        db.close()


def record_run(db: Session, problem: str, method: str, status: str, iterations: int, report: dict) -> RunRecord:
    record = RunRecord(
        problem=problem,
        method=method,
        status=status,
        iterations=iterations,
        report=json.dumps(report),
    )
    db.add(record)
    db.commit()
    db.refresh(record)
    return record


def try_record_run(problem: str, method: str, status: str, iterations: int, report: dict) -> Optional[int]:
    """record_run in its own session; failures are logged, never raised."""
    db = session_factory()()
    try:
        return record_run(db, problem, method, status, iterations, report).id
    except Exception as db_error:
        db.rollback()
        logger.warning("Failed to save run to database: %s", db_error)
        return None
    finally:
        db.close()


def serialize_run(record: RunRecord) -> dict:
    return {
        "id": record.id,
        "problem": record.problem,
        "method": record.method,
        "status": record.status,
        "iterations": record.iterations,
        "report": json.loads(record.report) if record.report else None,
        "created_at": record.created_at.isoformat() if record.created_at else None,
        "updated_at": record.updated_at.isoformat() if record.updated_at else None,
    }
