import hashlib
import json
import logging
import threading
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from .config import config
from .exceptions import CacheError

logger = logging.getLogger(__name__)

CACHE_VERSION = 1


class CoefficientCache:
    """Content-hash keyed store of Taylor expansion coefficients."""

    _locks: Dict[str, threading.Lock] = {}
    _locks_guard = threading.Lock()

    def __init__(self, cache_dir: Optional[str] = None, enabled: bool = True):
        self.cache_dir = Path(cache_dir or config.cache_dir)
        self.enabled = enabled
        if self.enabled:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def compute_key(kind: str, meta: Dict[str, Any]) -> str:
        """SHA256 of the canonical JSON of everything the coefficients depend on."""
        hasher = hashlib.sha256()
        canonical = json.dumps({'kind': kind, 'version': CACHE_VERSION, 'meta': meta}, sort_keys=True, default=str)
        hasher.update(canonical.encode())
        return hasher.hexdigest()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    @classmethod
    def _lock_for(cls, key: str) -> threading.Lock:
        with cls._locks_guard:
            return cls._locks.setdefault(key, threading.Lock())

    def load(self, key: str) -> Optional[Dict[str, Any]]:
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with open(path, 'r', encoding='utf-8') as f:
                entry = json.load(f)
        except json.JSONDecodeError as e:
            raise CacheError(f"Corrupt cache entry {path}: {e}") from e
        if entry.get('version') != CACHE_VERSION:
            logger.info("Ignoring cache entry %s with version %s", key[:8], entry.get('version'))
            return None
        return entry['payload']

    def save(self, key: str, kind: str, meta: Dict[str, Any], payload: Dict[str, Any]) -> None:
        if not self.enabled:
            return
        entry = {
            'version': CACHE_VERSION,
            'kind': kind,
            'meta': meta,
            'created': datetime.now().isoformat(),
            'payload': payload,
        }
        path = self._path(key)
        tmp = path.with_suffix('.tmp')
        try:
            with open(tmp, 'w', encoding='utf-8') as f:
                json.dump(entry, f)
            tmp.replace(path)
        except OSError as e:
            raise CacheError(f"Failed to write cache entry {path}: {e}") from e

    def get_or_build(self, kind: str, meta: Dict[str, Any], builder: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        """Return the cached payload for (kind, meta), building it at most once per key."""
        key = self.compute_key(kind, meta)
        with self._lock_for(key):
            payload = self.load(key)
            if payload is not None:
                logger.info("Coefficient cache hit: %s %s", kind, key[:8])
                return payload
            logger.info("Coefficient cache miss: %s %s - building", kind, key[:8])
            payload = builder()
            self.save(key, kind, meta, payload)
            return payload

    def list_entries(self) -> List[Dict[str, Any]]:
        """Metadata of every cache entry, newest first."""
        if not self.cache_dir.exists():
            return []
        entries = []
        for path in sorted(self.cache_dir.glob('*.json')):
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    entry = json.load(f)
            except json.JSONDecodeError:
                logger.warning("Skipping unreadable cache file %s", path.name)
                continue
            entries.append({
                'key': path.stem,
                'kind': entry.get('kind'),
                'created': entry.get('created'),
                'meta': entry.get('meta', {}),
                'size_bytes': path.stat().st_size,
            })
        return sorted(entries, key=lambda e: e['created'] or '', reverse=True)
