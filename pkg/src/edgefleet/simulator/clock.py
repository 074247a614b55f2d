"""Discrete-event simulated clock.

Events fire in (time, kind priority, registration order) order. Kind priority
is sensor < telemetry < daily trigger < control, so a reading stamped exactly at
midnight is processed before that midnight's drift evaluation.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

Handler = Callable[["TimerEvent"], None]


class EventKind(enum.IntEnum):
    SENSOR = 0
    TELEMETRY = 1
    DAILY_TRIGGER = 2
    CONTROL = 3


@dataclass(frozen=True)
class TimerEvent:
    at: int
    kind: EventKind
    name: str
    payload: Any = None


@dataclass
class _Timer:
    reg: int
    kind: EventKind
    name: str
    handler: Handler | None
    period: int | None = None
    until: int | None = None  # exclusive
    payload: Any = None


@dataclass(order=True)
class _Entry:
    at: int
    kind: int
    reg: int
    seq: int
    timer: _Timer = field(compare=False)


class SimClock:
    def __init__(self, start: int = 0) -> None:
        self.now = start
        self._heap: list[_Entry] = []
        self._reg = itertools.count()
        self._seq = itertools.count()

    def _push(self, at: int, timer: _Timer) -> None:
        heapq.heappush(self._heap, _Entry(at, int(timer.kind), timer.reg, next(self._seq), timer))

    def schedule(
        self,
        at: int,
        kind: EventKind,
        name: str,
        handler: Handler | None = None,
        payload: Any = None,
    ) -> int:
        """One-shot event. Returns its registration number."""
        if at < self.now:
            raise ValueError(f"cannot schedule {name!r} in the past ({at} < {self.now})")
        timer = _Timer(next(self._reg), kind, name, handler, payload=payload)
        self._push(at, timer)
        return timer.reg

    def every(
        self,
        start: int,
        period: int,
        kind: EventKind,
        name: str,
        handler: Handler | None = None,
        until: int | None = None,
        payload: Any = None,
    ) -> int:
        """Recurring event at start, start+period, ... strictly before ``until``."""
        if period <= 0:
            raise ValueError("period must be positive")
        if start < self.now:
            raise ValueError(f"cannot start {name!r} in the past")
        timer = _Timer(next(self._reg), kind, name, handler, period, until, payload)
        if until is None or start < until:
            self._push(start, timer)
        return timer.reg

    def pending(self) -> int:
        return len(self._heap)

    def peek(self) -> int | None:
        return self._heap[0].at if self._heap else None

    def advance(self, to: int) -> list[TimerEvent]:
        """Fire every event with time <= ``to`` in order, then set the clock to ``to``."""
        if to < self.now:
            raise ValueError(f"clock cannot run backwards ({to} < {self.now})")
        fired = []
        while self._heap and self._heap[0].at <= to:
            entry = heapq.heappop(self._heap)
            timer = entry.timer
            self.now = entry.at
            if timer.period is not None:
                nxt = entry.at + timer.period
                if timer.until is None or nxt < timer.until:
                    self._push(nxt, timer)
            event = TimerEvent(entry.at, timer.kind, timer.name, timer.payload)
            fired.append(event)
            if timer.handler is not None:
                timer.handler(event)
        self.now = to
        return fired


def advance_clock(clock: SimClock, to: int) -> list[TimerEvent]:
    return clock.advance(to)
