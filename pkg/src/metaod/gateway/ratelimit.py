"""Sliding-window dispatch limiter."""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from typing import Callable


class SlidingWindowLimiter:
    """Admit at most ``qps`` dispatches in any window of one second.

    For ``qps >= 1`` the budget is ``floor(qps)`` per second; below one the
    window stretches to ``1 / qps`` seconds with a budget of one.  ``margin``
    widens the window slightly so that network jitter between this process and
    the server cannot make two admitted requests land inside one server-side
    second.
    """

    def __init__(self, qps: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep, margin: float = 0.02):
        if qps <= 0:
            raise ValueError("qps must be positive")
        self.budget = max(1, math.floor(qps))
        self.window = max(1.0, self.budget / qps) + margin
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a dispatch is allowed; returns the admission time."""
        with self._lock:
            while True:
                now = self._clock()
                # 1 ns slack: sleeping exactly to the deadline can land an ulp short
                while self._stamps and self._stamps[0] + self.window <= now + 1e-9:
                    self._stamps.popleft()
                if len(self._stamps) < self.budget:
                    self._stamps.append(now)
                    return now
                self._sleep(self._stamps[0] + self.window - now)
