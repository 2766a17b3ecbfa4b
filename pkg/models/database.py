import logging
from contextlib import contextmanager
from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker
from sqlalchemy.pool import NullPool, StaticPool

from config.settings import RUNS_DATABASE_URL

logger = logging.getLogger(__name__)

# Database Setup
Base = declarative_base()

engine = None
SessionLocal = sessionmaker(autocommit=False, autoflush=False)


def init_engine(url=None):
    """Bind the session factory to the run ledger at `url` and create missing tables.

    Returns False when no ledger is configured.
    """
    global engine
    url = url or RUNS_DATABASE_URL
    if not url:
        return False
    # NullPool opens a connection per session; CLI runs are short-lived.
    # In-memory SQLite vanishes with its connection, so it keeps a single one.
    if url.startswith('sqlite'):
        in_memory = url in ('sqlite://', 'sqlite:///:memory:')
        engine = create_engine(url, connect_args={"check_same_thread": False},
                               poolclass=StaticPool if in_memory else NullPool)
    else:
        engine = create_engine(url, poolclass=NullPool)
    SessionLocal.configure(bind=engine)
    Base.metadata.create_all(engine)
    logger.info(f"Run ledger ready at {engine.url.render_as_string(hide_password=True)}")
    return True


def is_enabled():
    return engine is not None


@contextmanager
def get_db():
    """Context manager for database sessions."""
    session = SessionLocal()
    try:
        yield session
        session.commit()
    except Exception as e:
        session.rollback()
        raise e
    finally:
        session.close()


def _now():
    return datetime.now(timezone.utc)


# Database Models
class TrainingRun(Base):
    __tablename__ = 'training_runs'
    id = Column(Integer, primary_key=True)
    created_at = Column(DateTime(timezone=True), default=_now)
    data_path = Column(String)
    model_path = Column(String)
    rows = Column(Integer)
    dimension = Column(Integer)
    trees = Column(Integer)
    c0 = Column(Float)
    gamma = Column(Float)
    seed = Column(Integer)
    training_log_density = Column(Float)
    seconds = Column(Float)
    evaluations = relationship('Evaluation', back_populates='run', cascade="all, delete-orphan")


class CVScore(Base):
    __tablename__ = 'cv_scores'
    id = Column(Integer, primary_key=True)
    created_at = Column(DateTime(timezone=True), default=_now)
    data_path = Column(String)
    c0 = Column(Float)
    gamma = Column(Float)
    folds = Column(Integer)
    mean_score = Column(Float)
    fold_scores = Column(Text)  # Comma-separated held-out scores
    selected = Column(Integer, default=0)


class Evaluation(Base):
    __tablename__ = 'evaluations'
    id = Column(Integer, primary_key=True)
    created_at = Column(DateTime(timezone=True), default=_now)
    model_path = Column(String)
    kind = Column(String)  # 'predictive' or 'kl:<scenario>'
    value = Column(Float)
    spread = Column(Float)  # SD for predictive scores, SE for KL estimates
    count = Column(Integer)
    excluded = Column(Integer, default=0)
    run_id = Column(Integer, ForeignKey('training_runs.id'), nullable=True)
    run = relationship('TrainingRun', back_populates='evaluations')


# Database helper functions
def record_training_run(session, **fields):
    """Add a training run to the ledger."""
    run = TrainingRun(**fields)
    session.add(run)
    session.flush()
    return run


def record_cv_table(session, data_path, folds, result):
    """Add every row of a cross-validation table, marking the selected pair."""
    for row in result.table:
        session.add(CVScore(
            data_path=data_path, c0=row.c0, gamma=row.gamma, folds=folds, mean_score=row.mean,
            fold_scores=",".join(repr(float(s)) for s in row.fold_scores),
            selected=int(row.c0 == result.c0 and row.gamma == result.gamma),
        ))
    session.flush()


def latest_run_for_model(session, model_path):
    return (session.query(TrainingRun).filter_by(model_path=model_path)
            .order_by(TrainingRun.id.desc()).first())


def record_evaluation(session, model_path, kind, value, spread, count, excluded=0):
    """Add an evaluation, linking it to the latest training run that wrote the model."""
    run = latest_run_for_model(session, model_path)
    evaluation = Evaluation(model_path=model_path, kind=kind, value=value, spread=spread,
                            count=count, excluded=excluded, run=run)
    session.add(evaluation)
    session.flush()
    return evaluation


def get_training_runs(session, limit=20):
    """Most recent training runs first."""
    return session.query(TrainingRun).order_by(TrainingRun.id.desc()).limit(limit).all()
