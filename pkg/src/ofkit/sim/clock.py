"""Discrete-event loop and the JSON-lines transcript it produces."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass
class SimClock:
    """Events ordered by ``(time, insertion sequence)``; time never goes back."""

    now: float = 0.0
    _queue: list = field(default_factory=list)
    _seq: int = 0

    def schedule(self, at: float, fn: Callable[[], Any]) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before now={self.now}")
        heapq.heappush(self._queue, (at, self._seq, fn))
        self._seq += 1

    def every(self, start: float, period: float, fn: Callable[[], Any], until: float) -> None:
        def tick():
            fn()
            nxt = self.now + period
            if nxt <= until:
                self.schedule(nxt, tick)
        if start <= until:
            self.schedule(start, tick)

    def run(self, until: float = float("inf")) -> None:
        while self._queue and self._queue[0][0] <= until:
            at, _, fn = heapq.heappop(self._queue)
            self.now = at
            fn()
        if until != float("inf"):
            self.now = max(self.now, until)

    @property
    def pending(self) -> int:
        return len(self._queue)


@dataclass
class Transcript:
    clock: SimClock
    events: list = field(default_factory=list)

    def emit(self, actor: str, action: str, **detail) -> dict:
        ev = {"t": self.clock.now, "actor": actor, "action": action, "detail": detail}
        self.events.append(ev)
        return ev

    def where(self, action: str, actor: str | None = None) -> list[dict]:
        return [e for e in self.events if e["action"] == action and (actor is None or e["actor"] == actor)]

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, default=_default) + "\n" for e in self.events)


def _default(o):
    if isinstance(o, bytes):
        return o.hex()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serialisable: {type(o).__name__}")
