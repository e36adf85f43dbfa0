from __future__ import annotations

import enum
import threading
import time


class ClockMode(str, enum.Enum):
    VIRTUAL = "Virtual"
    REALTIME = "Realtime"


class SimClock:
    """Milliseconds since the start of the simulation.

    In virtual mode time moves only when the fabric advances it.  In
    realtime mode ``advance`` also sleeps, scaled by ``time_scale``.
    """

    def __init__(self, mode: ClockMode = ClockMode.VIRTUAL, start: float = 0.0,
                 time_scale: float = 1.0):
        self.mode = ClockMode(mode)
        self.time_scale = time_scale
        self._now = float(start)
        self._lock = threading.Lock()

    @property
    def now(self) -> float:
        return self._now

    def advance(self, ms: float) -> float:
        if ms < 0:
            raise ValueError("time cannot go backwards")
        if self.mode is ClockMode.REALTIME and ms:
            time.sleep(ms * self.time_scale / 1000.0)
        with self._lock:
            self._now += ms
            return self._now
