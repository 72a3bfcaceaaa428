"""Content-addressed on-disk response cache.

Layout: ``<root>/<backend_id>/<content_hash>.<params_key>.a<attempt>.json``.
Each record keeps the prompt so a cache directory doubles as a replay source.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path


class ResponseCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path_for(self, backend_id: str, content_hash: str, params_key: str, attempt: int) -> Path:
        safe_backend = backend_id.replace("/", "_")
        return self.root / safe_backend / f"{content_hash}.{params_key}.a{attempt}.json"

    def get(self, backend_id: str, content_hash: str, params_key: str, attempt: int) -> dict | None:
        path = self.path_for(backend_id, content_hash, params_key, attempt)
        rec = None
        if path.exists():
            rec = json.loads(path.read_text())
            if rec.get("content_hash") != content_hash:
                rec = None
        with self._lock:
            if rec is None:
                self.misses += 1
            else:
                self.hits += 1
        return rec

    def put(self, record: dict) -> Path:
        path = self.path_for(record["backend_id"], record["content_hash"], record["params_key"],
                             record["attempt"])
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(record, fh, indent=1, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def __len__(self) -> int:
        return sum(1 for _ in self.root.rglob("*.json")) if self.root.exists() else 0
