"""Ablation run registry

Records every (sweep, setting, seed) run of an ablation in an SQLite
database so that an interrupted sweep can be picked up again: completed
runs are skipped, runs that errored or never finished are retried.
"""

import datetime
import enum
import logging
from os.path import isfile

from sqlalchemy import Boolean
from sqlalchemy import Column
from sqlalchemy import DateTime
from sqlalchemy import Enum
from sqlalchemy import Float
from sqlalchemy import Integer
from sqlalchemy import String
from sqlalchemy import UniqueConstraint
from sqlalchemy import create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker

LOGGER = logging.getLogger("massl")

BASE = declarative_base()

RUNS_DB_FILE = "ablation.db"


class UnknownRun(Exception):
    """No row for the requested (sweep, setting, seed)."""


class StatusEnum(enum.Enum):
    """Controlled list of statuses for recording progress in our database."""

    STATUS_NEW = 1
    STATUS_IN_PROGRESS = 2
    STATUS_COMPLETE = 3
    STATUS_ERROR = 4


class AblationRun(BASE):
    """Row definition for the ablation database."""

    __tablename__ = "runs"
    __table_args__ = (UniqueConstraint("sweep", "setting", "seed"),)
    id = Column(Integer, primary_key=True)
    sweep = Column(String(32), nullable=False)
    setting = Column(String(64), nullable=False)
    seed = Column(Integer, nullable=False)
    status = Column(Enum(StatusEnum))
    message = Column(String(200), nullable=True)
    knn = Column(Float, nullable=True)
    collapsed = Column(Boolean, nullable=True)
    feature_std = Column(Float, nullable=True)
    entropy_ratio = Column(Float, nullable=True)
    start_time = Column(DateTime())
    end_time = Column(DateTime())

    def __repr__(self):
        return (
            f"sweep={self.sweep}, setting={self.setting}, seed={self.seed}, "
            f"status={self.status}, knn={self.knn}, message={self.message}"
        )

    @property
    def processing_time(self):
        try:
            return f"{int((self.end_time - self.start_time).total_seconds())} seconds"
        except TypeError:
            return None

    def result_row(self):
        return {
            "sweep": self.sweep,
            "setting": self.setting,
            "seed": self.seed,
            "knn": self.knn,
            "collapsed": self.collapsed,
            "feature_std": self.feature_std,
            "entropy_ratio": self.entropy_ratio,
        }


def init(databasefile):
    """Open (creating if needed) the database and return a session."""
    if not isfile(databasefile):
        with open(databasefile, "a"):
            pass
    engine = create_engine(f"sqlite:///{databasefile}", echo=False)
    BASE.metadata.create_all(engine)
    session = sessionmaker(bind=engine)
    return session()


def get_run(session, sweep, setting, seed):
    return (
        session.query(AblationRun)
        .filter_by(sweep=sweep, setting=str(setting), seed=seed)
        .scalar()
    )


def get_runs(session, sweep=None, status=None):
    query = session.query(AblationRun)
    if sweep is not None:
        query = query.filter_by(sweep=sweep)
    if status is not None:
        query = query.filter_by(status=status)
    return query.order_by(AblationRun.id).all()


def register(session, sweep, setting, seed):
    """Insert a NEW row unless the run is already known; return the row."""
    run = get_run(session, sweep, setting, seed)
    if run is None:
        run = AblationRun(
            sweep=sweep, setting=str(setting), seed=seed, status=StatusEnum.STATUS_NEW
        )
        session.add(run)
        session.commit()
    elif run.status != StatusEnum.STATUS_NEW:
        LOGGER.debug("Run %s/%s/%s already has status %s", sweep, setting, seed, run.status)
    return run


def _set_status(session, status_enum, sweep, setting, seed, message=None):
    run = get_run(session, sweep, setting, seed)
    if run is None:
        raise UnknownRun(f"no ablation run {sweep}/{setting}/seed {seed}")
    run.status = status_enum
    run.message = message if status_enum == StatusEnum.STATUS_ERROR else ""
    if status_enum == StatusEnum.STATUS_IN_PROGRESS:
        run.start_time = datetime.datetime.utcnow()
        run.end_time = None
    if status_enum == StatusEnum.STATUS_COMPLETE:
        run.end_time = datetime.datetime.utcnow()
    session.commit()
    return run


def set_status_in_progress(session, sweep, setting, seed):
    LOGGER.info("Starting ablation run %s=%s seed %s", sweep, setting, seed)
    return _set_status(session, StatusEnum.STATUS_IN_PROGRESS, sweep, setting, seed)


def set_status_complete(session, sweep, setting, seed, result):
    """Store the evaluation ``result`` (knn, collapsed, feature_std,
    entropy_ratio) and mark the run complete.
    """
    run = get_run(session, sweep, setting, seed)
    if run is None:
        raise UnknownRun(f"no ablation run {sweep}/{setting}/seed {seed}")
    run.knn = result["knn"]
    run.collapsed = bool(result["collapsed"])
    run.feature_std = result["feature_std"]
    run.entropy_ratio = result["entropy_ratio"]
    run = _set_status(session, StatusEnum.STATUS_COMPLETE, sweep, setting, seed)
    if run.processing_time is not None:
        LOGGER.info("Ablation run %s=%s seed %s done in %s", sweep, setting, seed, run.processing_time)
    return run


def set_status_error(session, sweep, setting, seed, message):
    return _set_status(
        session, StatusEnum.STATUS_ERROR, sweep, setting, seed, message=str(message)[:200]
    )


def pending(session, sweep, settings, seeds):
    """Register every (setting, seed) and return the ones not yet complete."""
    todo = []
    for setting in settings:
        for seed in seeds:
            run = register(session, sweep, setting, seed)
            if run.status == StatusEnum.STATUS_COMPLETE:
                LOGGER.info("Skipping completed run %s=%s seed %s", sweep, setting, seed)
                continue
            todo.append((setting, seed))
    return todo
