"""A small deterministic discrete-event loop."""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Callable


class EventKind(enum.IntEnum):
    SEND_START = 0
    DELIVERY = 1
    WAIT_RELEASE = 2
    COMPUTE_DONE = 3


@dataclass(frozen=True, order=True)
class SimEvent:
    timestamp: float
    worker: int
    kind: EventKind
    message: tuple = ()
    action: Callable | None = field(default=None, compare=False, repr=False)


class EventEngine:
    """Pops events in ``(timestamp, worker, kind, message)`` order.

    Actions may schedule further events but never in the past. An action can
    add an event at the current time that sorts before the one being handled,
    so ``processed`` (pop order) is causal but not sorted; ``log`` is the same
    events stably sorted by ``(timestamp, worker, kind)``. Both depend only on
    the inputs.
    """

    def __init__(self):
        self.now = 0.0
        self.processed: list[SimEvent] = []
        self._heap: list[SimEvent] = []

    @property
    def log(self) -> list[SimEvent]:
        return sorted(self.processed, key=lambda e: (e.timestamp, e.worker, e.kind))

    def schedule(self, timestamp: float, kind: EventKind, worker: int, message: tuple = (),
                 action: Callable[[SimEvent], None] | None = None) -> SimEvent:
        if timestamp < self.now:
            raise ValueError(f"cannot schedule at {timestamp} before now={self.now}")
        ev = SimEvent(timestamp, worker, kind, message, action)
        heapq.heappush(self._heap, ev)
        return ev

    def run(self) -> float:
        while self._heap:
            ev = heapq.heappop(self._heap)
            self.now = ev.timestamp
            self.processed.append(ev)
            if ev.action is not None:
                ev.action(ev)
        return self.now

    def trace(self) -> list[tuple]:
        """The log without callables, for comparing runs."""
        return [(e.timestamp, e.worker, int(e.kind), e.message) for e in self.log]
