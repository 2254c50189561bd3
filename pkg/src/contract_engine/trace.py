"""Append-only audit trail.

Events are written as JSONL, one object per line, keys sorted, integers only
for quantities. ``schema_version`` is carried on every line so that a single
trace file is self-describing.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

SCHEMA_VERSION = 1


class EventKind(str, Enum):
    DRAFTED = "DRAFTED"
    ACTIVE = "ACTIVE"
    CONSUMPTION = "CONSUMPTION"
    ALERT = "ALERT"
    ALLOCATION = "ALLOCATION"
    POOL = "POOL"
    AMENDMENT = "AMENDMENT"
    FULFILLED = "FULFILLED"
    VIOLATED = "VIOLATED"
    EXPIRED = "EXPIRED"
    TERMINATED = "TERMINATED"
    CONSERVATION_CHECK = "CONSERVATION_CHECK"


TERMINAL_KINDS = frozenset({EventKind.FULFILLED, EventKind.VIOLATED, EventKind.EXPIRED, EventKind.TERMINATED})


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    logical_time_ms: int
    contract_id: str
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "seq": self.seq,
            "logical_time_ms": self.logical_time_ms,
            "contract_id": self.contract_id,
            "kind": self.kind.value,
            "payload": self.payload,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TraceEvent":
        return cls(
            seq=int(obj["seq"]),
            logical_time_ms=int(obj["logical_time_ms"]),
            contract_id=str(obj["contract_id"]),
            kind=EventKind(obj["kind"]),
            payload=dict(obj.get("payload") or {}),
        )


class AuditLog:
    """In-memory event sink with a strictly increasing sequence counter."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []
        self._seq = 0
        self._lock = threading.Lock()

    def emit(self, kind: EventKind, contract_id: str, now: int, **payload: Any) -> TraceEvent:
        with self._lock:
            self._seq += 1
            ev = TraceEvent(self._seq, int(now), contract_id, kind, payload)
            self.events.append(ev)
        return ev

    def of_kind(self, *kinds: EventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def for_contract(self, contract_id: str) -> list[TraceEvent]:
        return [e for e in self.events if e.contract_id == contract_id]

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def emit(log: AuditLog | None, kind: EventKind, contract_id: str, now: int, **payload: Any) -> None:
    if log is not None:
        log.emit(kind, contract_id, now, **payload)


def write_jsonl(events: Iterable[TraceEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ev in events:
            f.write(ev.to_line())
            f.write("\n")


def read_jsonl(path: str | Path) -> list[TraceEvent]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(TraceEvent.from_json(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace line: {exc}") from exc
    return out
