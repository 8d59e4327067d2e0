"""
Optional run ledger: one row per simulate run.
"""

import logging
from datetime import datetime
from typing import List, Optional

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

logger = logging.getLogger(__name__)

Base = declarative_base()


class RunRecord(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    config_digest = Column(String(64), nullable=False, index=True)
    seed = Column(Integer)
    iterations = Column(Integer, nullable=False)
    mean_o_inmem = Column(Float)
    max_o_inmem = Column(Float)
    samples_per_second = Column(Float)
    baseline_samples_per_second = Column(Float)
    snapshots_completed = Column(Integer)
    recoveries = Column(Integer)
    notes = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)

    def to_dict(self):
        return {
            'id': self.id,
            'config_digest': self.config_digest,
            'seed': self.seed,
            'iterations': self.iterations,
            'mean_o_inmem': self.mean_o_inmem,
            'max_o_inmem': self.max_o_inmem,
            'samples_per_second': self.samples_per_second,
            'baseline_samples_per_second': self.baseline_samples_per_second,
            'snapshots_completed': self.snapshots_completed,
            'recoveries': self.recoveries,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


class RunLedger:
    def __init__(self, db_url: str, engine=None):
        self.engine = engine or create_engine(db_url)
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine)

    def record(self, **fields) -> int:
        session = self.Session()
        try:
            row = RunRecord(**fields)
            session.add(row)
            session.commit()
            logger.info(f"Recorded run {row.id} ({row.config_digest[:12]})")
            return row.id
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    def runs(self, config_digest: Optional[str] = None) -> List[dict]:
        session = self.Session()
        try:
            query = session.query(RunRecord)
            if config_digest is not None:
                query = query.filter(RunRecord.config_digest == config_digest)
            return [r.to_dict() for r in query.order_by(RunRecord.id).all()]
        finally:
            session.close()
