"""
Redis cache for global-baseline results.

A baseline depends only on the scenario and the solver settings, so results
are stored under a hash of both and reused by solve, bench and baseline.
Redis being unavailable never fails a run: errors are logged and read as a
miss.
"""

import json
import logging
import time
from typing import List, Optional

import redis

import settings
from config import SolverSettings, describe, fingerprint

logger = logging.getLogger(__name__)

KEY_PREFIX = "mmdp:baseline:"


def default_client() -> redis.Redis:
    return redis.Redis(
        host=settings.redis_host,
        port=settings.redis_port,
        db=settings.redis_db,
        decode_responses=True,
        socket_connect_timeout=5,
        socket_timeout=5,
        retry_on_timeout=True,
    )


class BaselineCache:
    def __init__(self, client=None, ttl_seconds: Optional[int] = None):
        self.client = client if client is not None else default_client()
        self.ttl_seconds = ttl_seconds or settings.cache_ttl_seconds

    @staticmethod
    def key(scenario, solver: SolverSettings) -> str:
        return KEY_PREFIX + fingerprint(scenario, solver)

    def ping(self) -> bool:
        try:
            return bool(self.client.ping())
        except Exception as e:
            logger.warning("redis unavailable: %s", e)
            return False

    def get(self, scenario, solver: SolverSettings) -> Optional[dict]:
        """
        Cached baseline entry for this scenario and solver, or None.
        """
        key = self.key(scenario, solver)
        try:
            raw = self.client.get(key)
            if raw:
                logger.debug("baseline cache hit %s", key)
                return json.loads(raw)
            logger.debug("baseline cache miss %s", key)
            return None
        except Exception as e:
            logger.warning("error reading baseline %s: %s", key, e)
            return None

    def put(self, scenario, solver: SolverSettings, gain: float, runtime_s: float, iterations: int = 0) -> bool:
        key = self.key(scenario, solver)
        entry = {
            "fingerprint": key[len(KEY_PREFIX):],
            "scenario": describe(scenario),
            "gain": gain,
            "runtime_s": runtime_s,
            "iterations": iterations,
            "created_at": int(time.time() * 1000),
        }
        try:
            self.client.setex(key, self.ttl_seconds, json.dumps(entry))
            return True
        except Exception as e:
            logger.warning("error saving baseline %s: %s", key, e)
            return False

    def entries(self) -> List[dict]:
        """All cached baselines with their remaining TTL in seconds."""
        found = []
        for key in self.client.keys(KEY_PREFIX + "*"):
            try:
                raw = self.client.get(key)
                if not raw:
                    continue
                entry = json.loads(raw)
                entry["ttl"] = self.client.ttl(key)
                found.append(entry)
            except Exception as e:
                logger.warning("error reading key %s: %s", key, e)
        return found

    def clear(self) -> int:
        deleted = 0
        for key in self.client.keys(KEY_PREFIX + "*"):
            try:
                deleted += int(self.client.delete(key))
            except Exception as e:
                logger.warning("error deleting %s: %s", key, e)
        return deleted
