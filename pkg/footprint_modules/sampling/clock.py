import threading
import time
from typing import Optional


class MonotonicClock:
    """Real monotonic time in milliseconds"""

    def now_ms(self) -> float:
        return time.monotonic_ns() / 1e6

    def sleep_until(self, t_ms: float, stop: threading.Event) -> bool:
        """Wait until t_ms; False means the stop event fired first"""
        remaining = t_ms - self.now_ms()
        if remaining > 0:
            return not stop.wait(remaining / 1000.0)
        return not stop.is_set()


class VirtualClock:
    """Clock that jumps straight to every deadline; used for offline sampling and tests"""

    def __init__(self, start_ms: float = 0.0):
        self._now = float(start_ms)
        self._lock = threading.Lock()

    def now_ms(self) -> float:
        with self._lock:
            return self._now

    def advance(self, delta_ms: float):
        with self._lock:
            self._now += delta_ms

    def sleep_until(self, t_ms: float, stop: threading.Event) -> bool:
        if stop.is_set():
            return False
        with self._lock:
            self._now = max(self._now, t_ms)
        return True


class StopSignal:
    """Tells a running sampler to finish.

    `set()` may be called from any thread. `after_ms` makes the sampler stop on
    its own once that much sampling time has elapsed.
    """

    def __init__(self, after_ms: Optional[float] = None):
        self.event = threading.Event()
        self.after_ms = after_ms

    def set(self):
        self.event.set()

    def is_set(self) -> bool:
        return self.event.is_set()
