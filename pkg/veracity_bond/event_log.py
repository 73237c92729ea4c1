"""Append-only, JSON-lines event log with a sealed audit trail.

Each contest gets its own log. Entries are numbered from 0 and never
rewritten; the sealed trail holds the data that must stay hidden from
contest-visible output (evaluator identities) and is written to a sibling
``*.audit.jsonl`` file.
"""
import hashlib
import json
import logging
import os
from copy import deepcopy
from dataclasses import dataclass
from typing import IO, Iterator, List, Optional, Tuple, Union

import smart_open

from veracity_bond.utils import VeracityBondError, is_s3_filepath

logger = logging.getLogger(__name__)


class ReplayError(VeracityBondError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LogEntry:
    seq: int
    tick: int
    kind: str
    payload: dict
    seed_state: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "kind": self.kind,
            "payload": self.payload,
            "seed_state": self.seed_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogEntry":
        missing = {"seq", "tick", "kind", "payload"} - set(d)
        if missing:
            raise ReplayError(f"Log entry is missing fields {sorted(missing)}: {d}")
        return cls(
            seq=d["seq"],
            tick=d["tick"],
            kind=d["kind"],
            payload=d["payload"],
            seed_state=d.get("seed_state"),
        )


def audit_path_for(path: str) -> str:
    if path.endswith(".jsonl"):
        return path[: -len(".jsonl")] + ".audit.jsonl"
    return path + ".audit.jsonl"


class EventLog:
    def __init__(self, content_id: str, entries: List[LogEntry] = None):
        self.content_id = content_id
        self._entries: List[LogEntry] = []
        self._sealed: List[LogEntry] = []
        for entry in entries or []:
            self._check_next(entry)
            self._entries.append(entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(self._entries)

    def __getitem__(self, i: int) -> LogEntry:
        return self._entries[i]

    @property
    def entries(self) -> Tuple[LogEntry, ...]:
        return tuple(self._entries)

    @property
    def sealed(self) -> Tuple[LogEntry, ...]:
        return tuple(self._sealed)

    def _check_next(self, entry: LogEntry):
        expected = len(self._entries)
        if entry.seq != expected:
            raise ReplayError(
                f"Out-of-order log entry: expected seq {expected}, got {entry.seq}"
            )
        if self._entries and entry.tick < self._entries[-1].tick:
            raise ReplayError(
                f"Log entry {entry.seq} goes back in time "
                f"({entry.tick} < {self._entries[-1].tick})"
            )

    def append(
        self, tick: int, kind: str, payload: dict, seed_state: dict = None
    ) -> LogEntry:
        # round-trip through JSON so the stored payload is exactly what a reader sees
        entry = LogEntry(
            seq=len(self._entries),
            tick=tick,
            kind=kind,
            payload=json.loads(canonical_json(payload)),
            seed_state=deepcopy(seed_state),
        )
        self._check_next(entry)
        self._entries.append(entry)
        logger.debug("%s #%d @%d %s", self.content_id, entry.seq, tick, kind)
        return entry

    def seal(self, tick: int, kind: str, payload: dict) -> LogEntry:
        entry = LogEntry(
            seq=len(self._sealed),
            tick=tick,
            kind=kind,
            payload=json.loads(canonical_json(payload)),
        )
        self._sealed.append(entry)
        return entry

    def prefix(self, k: int) -> "EventLog":
        return EventLog(self.content_id, self._entries[:k])

    def to_jsonl(self) -> str:
        return "".join(canonical_json(e.to_dict()) + "\n" for e in self._entries)

    def write(self, output_path: str, write_audit: bool = True) -> None:
        """Write the log (and optionally its sealed trail) as JSON lines."""
        if not is_s3_filepath(output_path):
            dirs = os.path.dirname(output_path)
            if dirs:
                os.makedirs(dirs, exist_ok=True)
        with smart_open.open(output_path, "w") as f:
            f.write(self.to_jsonl())
        if write_audit and self._sealed:
            with smart_open.open(audit_path_for(output_path), "w") as f:
                for entry in self._sealed:
                    f.write(canonical_json(entry.to_dict()) + "\n")

    @classmethod
    def read(cls, input_path: Union[str, IO]) -> "EventLog":
        if isinstance(input_path, str):
            with smart_open.open(input_path, "r") as f:
                lines = f.read().splitlines()
        else:
            lines = input_path.read().splitlines()
        return cls.from_lines(lines)

    @classmethod
    def from_lines(cls, lines: List[str]) -> "EventLog":
        entries = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                entries.append(LogEntry.from_dict(json.loads(line)))
            except json.JSONDecodeError as e:
                raise ReplayError(f"Corrupt log line {i}: {e}")
        if not entries:
            raise ReplayError("Event log is empty")
        content_id = entries[0].payload.get("content_id", "")
        return cls(content_id, entries)
