"""Append-only JSONL record log with last-wins compaction.

Every acknowledged write is flushed and fsync'd before the caller gets
its acknowledgement, so a restart never loses an acknowledged record.
Resubmissions append; readers apply last-wins per logical key, keeping
the full history as an audit trail.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path


def record_key(record: dict):
    """Logical identity used for last-wins semantics; None = always keep."""
    kind = record.get("type")
    if kind == "rating":
        return ("rating", record["session_id"], record["token"], record["scale"])
    if kind == "transcript":
        return ("transcript", record["session_id"], record["token"])
    if kind == "session":
        return ("session", record["session_id"])
    return None


class RecordLog:
    """Single-appender JSONL log; reads see only complete lines."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> dict:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        if "\n" in line:
            raise ValueError("record serialization produced a newline")
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return record

    def records(self) -> list[dict]:
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError:
                    # a torn trailing line from a crash mid-write; records
                    # after it were never acknowledged
                    break
        return out

    def effective(self) -> dict:
        """Last-wins view: logical key -> newest record."""
        view: dict = {}
        for rec in self.records():
            key = record_key(rec)
            if key is not None:
                view[key] = rec
        return view

    def audit_count(self, key) -> int:
        return sum(1 for rec in self.records() if record_key(rec) == key)

    def compact(self) -> int:
        """Rewrite the log keeping only the effective records; returns the
        number of dropped audit entries."""
        with self._lock:
            records = self.records()
            keep = {}
            order = []
            for idx, rec in enumerate(records):
                key = record_key(rec) or ("raw", idx)
                if key not in keep:
                    order.append(key)
                keep[key] = rec
            dropped = len(records) - len(keep)
            tmp = self.path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for key in order:
                    fh.write(json.dumps(keep[key], sort_keys=True,
                                        ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        return dropped
