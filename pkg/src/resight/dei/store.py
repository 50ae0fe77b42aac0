"""Durable state: append-only transaction log, snapshots, and blobs.

Every committed mutation is one log entry (strictly increasing seq,
CRC-32 over the canonical payload JSON) appended and flushed before it
is applied to the in-memory state, so replaying the log after a crash
reconstructs exactly the committed store. A corrupt or truncated tail
terminates replay at the last valid prefix. Snapshots bound replay
time; image blobs live outside the log, content-addressed by SHA-256.

Concurrency: every commit and every read runs under one store lock
(writes serialize through the single committer; readers copy what they
need while holding it), which gives multi-row commits all-or-nothing
visibility. At this system's scale the lock is never contended enough
to warrant lock-free reader structures.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import zlib
from pathlib import Path

OPERATIONS = ("upsert", "transition", "score-write", "task-write", "merge")

COLLECTIONS = (
    "meta",
    "workflows",
    "principals",
    "sessions",
    "images",
    "work_items",
    "scores",
    "tasks",
    "annotators",
    "cohorts",
)


class LogCorruption(Exception):
    """Internal marker: replay hit an invalid entry (handled, not raised)."""


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _checksum(payload_json: str) -> int:
    return zlib.crc32(payload_json.encode("utf-8")) & 0xFFFFFFFF


class TransactionLog:
    """Append-only JSONL of {seq, op, payload, crc} entries."""

    def __init__(self, path: Path, durability: str = "full"):
        if durability not in ("full", "none"):
            raise ValueError(f"unknown durability mode {durability!r}")
        self.path = Path(path)
        self.durability = durability
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")

    def append(self, seq: int, op: str, payload: dict) -> None:
        if op not in OPERATIONS:
            raise ValueError(f"unknown operation {op!r}")
        payload_json = _canonical(payload)
        line = json.dumps(
            {"seq": seq, "op": op, "payload": json.loads(payload_json), "crc": _checksum(payload_json)},
            sort_keys=True,
            separators=(",", ":"),
        )
        self._fh.write(line.encode("utf-8") + b"\n")
        self._fh.flush()
        if self.durability == "full":
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def replay(path: Path, from_seq: int = 0):
        """Yield valid entries in order; stop at the first invalid one."""
        path = Path(path)
        if not path.exists():
            return
        expected = from_seq + 1
        with open(path, "rb") as fh:
            for raw in fh:
                try:
                    entry = json.loads(raw)
                    seq, op = entry["seq"], entry["op"]
                    payload, crc = entry["payload"], entry["crc"]
                except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError):
                    return
                if op not in OPERATIONS or _checksum(_canonical(payload)) != crc:
                    return
                if seq < expected:
                    continue  # pre-snapshot entry
                if seq != expected:
                    return
                expected += 1
                yield {"seq": seq, "op": op, "payload": payload}


class DeiStore:
    """In-memory collections fronted by the write-ahead log."""

    def __init__(self, data_dir, durability: str = "full", appliers: dict | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        (self.data_dir / "blobs").mkdir(exist_ok=True)
        self._lock = threading.RLock()
        self.state: dict[str, dict] = {c: {} for c in COLLECTIONS}
        self.seq = 0
        self._appliers = dict(appliers or {})
        self._load_snapshot()
        for entry in TransactionLog.replay(self.log_path, from_seq=self.seq):
            self._apply(entry["op"], entry["payload"])
            self.seq = entry["seq"]
        self.log = TransactionLog(self.log_path, durability=durability)

    # -- paths ------------------------------------------------------------

    @property
    def log_path(self) -> Path:
        return self.data_dir / "transactions.log"

    @property
    def snapshot_path(self) -> Path:
        return self.data_dir / "snapshot.json"

    # -- commit / apply ----------------------------------------------------

    def commit(self, op: str, payload: dict):
        """Durably log then apply one mutation; returns the applier result."""
        with self._lock:
            seq = self.seq + 1
            self.log.append(seq, op, payload)
            result = self._apply(op, payload)
            self.seq = seq
            return result

    def _apply(self, op: str, payload: dict):
        if op == "upsert":
            collection = self.state[payload["collection"]]
            for key, record in payload["records"].items():
                if record is None:
                    collection.pop(key, None)
                else:
                    collection[key] = record
            return None
        applier = self._appliers.get(op)
        if applier is None:
            raise RuntimeError(f"no applier registered for operation {op!r}")
        return applier(self.state, payload)

    # -- reads ---------------------------------------------------------------

    def read(self, fn):
        """Run ``fn(state)`` under the lock; fn must copy what it returns."""
        with self._lock:
            return fn(self.state)

    def get(self, collection: str, key: str):
        with self._lock:
            record = self.state[collection].get(key)
            return json.loads(json.dumps(record)) if record is not None else None

    def list_keys(self, collection: str) -> list:
        with self._lock:
            return sorted(self.state[collection])

    @property
    def lock(self):
        return self._lock

    # -- snapshots -------------------------------------------------------------

    def write_snapshot(self) -> None:
        with self._lock:
            snapshot = {"seq": self.seq, "state": self.state}
            tmp = self.snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(snapshot, sort_keys=True))
            os.replace(tmp, self.snapshot_path)

    def _load_snapshot(self) -> None:
        if not self.snapshot_path.exists():
            return
        try:
            snapshot = json.loads(self.snapshot_path.read_text())
            state = snapshot["state"]
            self.state = {c: dict(state.get(c, {})) for c in COLLECTIONS}
            self.seq = int(snapshot["seq"])
        except (json.JSONDecodeError, KeyError, ValueError):
            self.state = {c: {} for c in COLLECTIONS}
            self.seq = 0

    # -- blobs ----------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        """Content-addressed write; re-uploads deduplicate to the same ref."""
        digest = hashlib.sha256(data).hexdigest()
        target = self.data_dir / "blobs" / digest
        if not target.exists():
            tmp = target.with_suffix(".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, target)
        return digest

    def get_blob(self, blob_ref: str) -> bytes:
        target = self.data_dir / "blobs" / blob_ref
        if not target.exists():
            raise FileNotFoundError(f"no blob {blob_ref}")
        return target.read_bytes()

    def close(self) -> None:
        self.log.close()
