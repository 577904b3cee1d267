"""Budget ledger and the persistent enhancement cache."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np


class BudgetLedger:
    """Hard cap on LLM calls.

    Calls are reserved before they are made and committed or released after.
    ``used_calls`` only counts committed calls and never decreases;
    ``used_calls + in_flight`` never exceeds ``max_calls``.
    """

    def __init__(self, max_calls=None):
        if max_calls is not None and max_calls < 0:
            raise ValueError("max_calls must be non-negative")
        self.max_calls = math.inf if max_calls is None else max_calls
        self._lock = threading.Lock()
        self._used = 0
        self._in_flight = 0
        self.observers = []

    @property
    def used_calls(self) -> int:
        with self._lock:
            return self._used

    @property
    def in_flight(self) -> int:
        with self._lock:
            return self._in_flight

    @property
    def remaining(self):
        with self._lock:
            return self.max_calls - self._used - self._in_flight

    @property
    def exhausted(self) -> bool:
        return self.remaining <= 0

    def _notify(self):
        for fn in self.observers:
            fn(self._used, self._in_flight)

    def reserve(self) -> bool:
        with self._lock:
            if self._used + self._in_flight >= self.max_calls:
                return False
            self._in_flight += 1
            self._notify()
            return True

    def commit(self) -> None:
        with self._lock:
            if self._in_flight <= 0:
                raise RuntimeError("commit without a reservation")
            self._in_flight -= 1
            self._used += 1
            self._notify()

    def release(self) -> None:
        with self._lock:
            if self._in_flight <= 0:
                raise RuntimeError("release without a reservation")
            self._in_flight -= 1
            self._notify()


def prompt_hash(user_message: str) -> str:
    return hashlib.sha256(user_message.encode("utf-8")).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True, eq=False)
class EnhancementRecord:
    node_id: int
    prompt_id: str
    input_hash: str
    output_text: str
    embedding: np.ndarray
    created_at: str = ""

    @property
    def key(self):
        return (self.node_id, self.prompt_id, self.input_hash)

    def to_json(self) -> str:
        return json.dumps({
            "node_id": self.node_id,
            "prompt_id": self.prompt_id,
            "input_hash": self.input_hash,
            "output_text": self.output_text,
            "embedding": [float(v) for v in self.embedding],
            "created_at": self.created_at,
        }, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> EnhancementRecord:
        obj = json.loads(line)
        return cls(
            node_id=int(obj["node_id"]),
            prompt_id=obj["prompt_id"],
            input_hash=obj["input_hash"],
            output_text=obj["output_text"],
            embedding=np.asarray(obj["embedding"], dtype=np.float64),
            created_at=obj.get("created_at", ""),
        )


class EnhancementCache:
    """In-memory index over an optional append-only ``cache.jsonl``.

    Lookups are lock-free reads of a dict; inserts go through one writer lock.
    ``claim(key)`` serializes work on a single key so concurrent misses on the
    same key produce one LLM call.
    """

    def __init__(self, path=None, clock=_now):
        self.path = path
        self.clock = clock
        self._records = {}
        self._write_lock = threading.Lock()
        self._key_locks = defaultdict(threading.Lock)
        self._key_locks_guard = threading.Lock()
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            rec = EnhancementRecord.from_json(line)
                            self._records.setdefault(rec.key, rec)
            except FileNotFoundError:
                pass

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def get(self, key):
        return self._records.get(key)

    def records(self):
        return list(self._records.values())

    def put(self, record: EnhancementRecord) -> bool:
        """Insert unless the key exists. Returns whether the record was new."""
        if not record.output_text:
            raise ValueError("enhancement output must be non-empty")
        with self._write_lock:
            if record.key in self._records:
                return False
            if not record.created_at:
                record = EnhancementRecord(record.node_id, record.prompt_id, record.input_hash,
                                           record.output_text, record.embedding, self.clock())
            self._records[record.key] = record
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(record.to_json() + "\n")
            return True

    @contextmanager
    def claim(self, key):
        with self._key_locks_guard:
            lock = self._key_locks[key]
        with lock:
            yield
