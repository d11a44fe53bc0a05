"""Per-event instrumentation used by the deterministic cost accounting.

Components that do chargeable work append events here; the benchmark's
cost model prices the log afterwards.  Event kinds:

    cache_scan  amount = entries examined by one cache lookup
    ds_scan     amount = records walked by one store scan
    rtt         amount = 1, one client/server round trip
"""

from __future__ import annotations

from dataclasses import dataclass

CACHE_SCAN = "cache_scan"
DS_SCAN = "ds_scan"
RTT = "rtt"


@dataclass(frozen=True)
class Event:
    kind: str
    amount: int


class EventLog:
    """Append-only list of cost events; cheap enough to leave attached."""

    def __init__(self):
        self.events: list[Event] = []

    def record(self, kind: str, amount: int = 1) -> None:
        self.events.append(Event(kind, amount))

    def clear(self) -> None:
        self.events.clear()

    def total(self, kind: str) -> int:
        return sum(e.amount for e in self.events if e.kind == kind)

    def __len__(self) -> int:
        return len(self.events)
