"""Pluggable record storage used by both servers.

Records are JSON-serializable dicts grouped into named collections. The
interface is deliberately small: get/put/delete/items plus a re-entrant
lock callers hold across compound read-modify-write sequences, which gives
the compare-and-set semantics token redemption needs.

Two implementations: in-memory, and an append-only JSON-lines log whose
state is rebuilt by replay on open. `dump_bytes` exposes the full persisted
state for the byte-scan invariants.
"""

from __future__ import annotations

import copy
import json
import os
import threading
from pathlib import Path
from typing import Iterator, Optional


class Storage:
    def __init__(self) -> None:
        self.lock = threading.RLock()
        self._collections: dict[str, dict[str, dict]] = {}

    def get(self, collection: str, key: str) -> Optional[dict]:
        with self.lock:
            value = self._collections.get(collection, {}).get(key)
            return copy.deepcopy(value) if value is not None else None

    def put(self, collection: str, key: str, value: dict) -> None:
        with self.lock:
            self._collections.setdefault(collection, {})[key] = copy.deepcopy(value)
            self._record("put", collection, key, value)

    def delete(self, collection: str, key: str) -> bool:
        with self.lock:
            existed = self._collections.get(collection, {}).pop(key, None) is not None
            if existed:
                self._record("delete", collection, key, None)
            return existed

    def items(self, collection: str) -> Iterator[tuple[str, dict]]:
        with self.lock:
            return iter(copy.deepcopy(sorted(self._collections.get(collection, {}).items())))

    def dump_bytes(self) -> bytes:
        with self.lock:
            return json.dumps(self._collections, sort_keys=True).encode("utf-8")

    def _record(self, op: str, collection: str, key: str, value: Optional[dict]) -> None:
        pass


class InMemoryStorage(Storage):
    pass


class AppendOnlyFileStorage(Storage):
    """JSON-lines mutation log; current state is the replay of the log."""

    def __init__(self, path: str | os.PathLike) -> None:
        super().__init__()
        self._path = Path(path)
        if self._path.exists():
            self._replay()
        else:
            self._path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self._path, "a", encoding="utf-8")

    def _replay(self) -> None:
        with open(self._path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if entry["op"] == "put":
                    self._collections.setdefault(entry["collection"], {})[entry["key"]] = entry["value"]
                elif entry["op"] == "delete":
                    self._collections.get(entry["collection"], {}).pop(entry["key"], None)

    def _record(self, op: str, collection: str, key: str, value: Optional[dict]) -> None:
        entry = {"op": op, "collection": collection, "key": key}
        if op == "put":
            entry["value"] = value
        self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._fh.flush()

    def dump_bytes(self) -> bytes:
        with self.lock:
            self._fh.flush()
            return self._path.read_bytes()

    def close(self) -> None:
        self._fh.close()
