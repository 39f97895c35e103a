"""
Database models and cache management for finished propagation runs

A cached run is keyed by the sha256 fingerprint of its canonical inputs, so
a sweep row that was already computed (same pulse, grid, medium and package
version) is read back instead of re-run.
"""
import json
import logging
from datetime import datetime, timedelta
from typing import Any, Dict, Optional

from sqlalchemy import Column, DateTime, Float, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import NullPool

logger = logging.getLogger(__name__)

Base = declarative_base()

DEFAULT_DATABASE_URL = 'sqlite:///coherent_mb_cache.db'


class CachedRun(Base):
    """Cache table for propagation runs"""
    __tablename__ = 'cached_runs'

    fingerprint = Column(String(64), primary_key=True)  # sha256 hex of the run inputs
    scenario = Column(String(32))
    a_in = Column(Float)
    a_out = Column(Float)
    alphaL = Column(Float)
    t2_us = Column(Float)  # NULL when T2 = inf
    metrics = Column(Text)  # RunMetrics as JSON
    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)


class DatabaseManager:
    """Manage database connections and cache operations"""

    def __init__(self, database_url: Optional[str] = None):
        if database_url is None:
            database_url = DEFAULT_DATABASE_URL
        self.database_url = database_url

        # Sweep workers open short sessions from several threads
        self.engine = create_engine(
            database_url,
            poolclass=NullPool,
            echo=False
        )

        self.Session = sessionmaker(bind=self.engine)

    def init_db(self):
        """Initialize database tables"""
        Base.metadata.create_all(self.engine)
        logger.info(f"[DB] Cache tables ready ({self.engine.url.render_as_string(hide_password=True)})")

    def get_cached_run(self, fingerprint: str) -> Optional[Dict[str, Any]]:
        """
        Get a run from cache

        Args:
            fingerprint: sha256 hex digest of the run inputs

        Returns:
            dict with a_in, a_out and metrics, or None if absent or unreadable
        """
        session = self.Session()
        try:
            cached = session.get(CachedRun, fingerprint)
            if cached is None:
                return None
            return {
                'scenario': cached.scenario,
                'a_in': cached.a_in,
                'a_out': cached.a_out,
                'alphaL': cached.alphaL,
                't2_us': cached.t2_us,
                'metrics': json.loads(cached.metrics) if cached.metrics else {},
            }
        except Exception as e:
            logger.warning(f"[DB] Error getting cached run {fingerprint[:12]}: {str(e)}")
            return None
        finally:
            session.close()

    def cache_run(self, fingerprint: str, run_data: Dict[str, Any]) -> bool:
        """
        Store a run in cache

        Args:
            fingerprint: sha256 hex digest of the run inputs
            run_data: dict with keys scenario, a_in, a_out, alphaL, t2_us, metrics

        Returns:
            True when stored
        """
        session = self.Session()
        try:
            cached = session.get(CachedRun, fingerprint)
            metrics = json.dumps(run_data.get('metrics') or {}, sort_keys=True)

            if cached:
                cached.scenario = run_data.get('scenario')
                cached.a_in = run_data.get('a_in')
                cached.a_out = run_data.get('a_out')
                cached.alphaL = run_data.get('alphaL')
                cached.t2_us = run_data.get('t2_us')
                cached.metrics = metrics
                cached.updated_at = datetime.utcnow()
            else:
                cached = CachedRun(
                    fingerprint=fingerprint,
                    scenario=run_data.get('scenario'),
                    a_in=run_data.get('a_in'),
                    a_out=run_data.get('a_out'),
                    alphaL=run_data.get('alphaL'),
                    t2_us=run_data.get('t2_us'),
                    metrics=metrics,
                )
                session.add(cached)

            session.commit()
            logger.debug(f"[DB] Stored run {fingerprint[:12]}")
            return True
        except Exception as e:
            logger.warning(f"[DB] Error caching run {fingerprint[:12]}: {str(e)}")
            session.rollback()
            return False
        finally:
            session.close()

    def get_cache_stats(self) -> Dict[str, int]:
        """Get statistics about the cache"""
        session = self.Session()
        try:
            total = session.query(CachedRun).count()

            week_ago = datetime.utcnow() - timedelta(days=7)
            recent = session.query(CachedRun).filter(
                CachedRun.updated_at >= week_ago
            ).count()

            return {
                'total_cached': total,
                'cached_last_week': recent
            }
        except Exception as e:
            logger.warning(f"[DB] Error getting cache stats: {str(e)}")
            return {'total_cached': 0, 'cached_last_week': 0}
        finally:
            session.close()

    def clear_cache(self) -> int:
        """Delete every cached run"""
        session = self.Session()
        try:
            deleted = session.query(CachedRun).delete()
            session.commit()
            logger.info(f"[DB] Deleted {deleted} cached runs")
            return deleted
        except Exception as e:
            logger.warning(f"[DB] Error clearing cache: {str(e)}")
            session.rollback()
            return 0
        finally:
            session.close()

    def clear_old_cache(self, days: int = 90) -> int:
        """Delete cache entries older than specified days"""
        session = self.Session()
        try:
            cutoff_date = datetime.utcnow() - timedelta(days=days)
            deleted = session.query(CachedRun).filter(
                CachedRun.updated_at < cutoff_date
            ).delete()
            session.commit()
            logger.info(f"[DB] Deleted {deleted} cache entries older than {days} days")
            return deleted
        except Exception as e:
            logger.warning(f"[DB] Error clearing old cache: {str(e)}")
            session.rollback()
            return 0
        finally:
            session.close()
