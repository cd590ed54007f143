"""Injectable time sources.

TTL boundaries (sessions, tokens, envelopes, signature windows) are tested
without sleeping by handing services a ManualClock. The optional auto-tick
gives each reading a strictly increasing microsecond component so that
deterministic request signatures never collide in the replay cache.
"""

from __future__ import annotations

import threading


class ManualClock:
    def __init__(self, start: float = 1_700_000_000.0, auto_tick: float = 0.0) -> None:
        self._now = float(start)
        self._auto_tick = auto_tick
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            value = self._now
            self._now += self._auto_tick
            return value

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += seconds
