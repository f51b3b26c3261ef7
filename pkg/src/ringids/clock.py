"""Monotonic counter time sources.

The engine never reads wall time: timestamps come either from a counter
incremented by a dedicated thread and divided by a ticks-per-microsecond
coefficient, or from a deterministic simulated clock the experiment runner
advances explicitly. Overflow and drift handling are deliberately out of
scope. Epoch is engine start (time zero).
"""

from __future__ import annotations

import threading

DEFAULT_CPUFREQ = 3785.0  # counter ticks per microsecond


class ClockError(Exception):
    pass


class AlreadyRunning(ClockError):
    pass


class NotStarted(ClockError):
    pass


def counter_to_us(ticks: int, cpufreq: float) -> int:
    """Convert raw counter ticks to whole microseconds."""
    return int(ticks / cpufreq)


class CounterClock:
    """Counter incremented by a background thread, read by any number of threads.

    Single-writer increments mean every reader observes a non-decreasing value;
    the OS may deschedule the writer and slow the apparent passage of time, but
    can never reverse it.
    """

    def __init__(self, cpufreq: float = DEFAULT_CPUFREQ):
        if cpufreq <= 0:
            raise ValueError("cpufreq must be positive")
        self.cpufreq = cpufreq
        self._ticks = 0
        self._thread: threading.Thread | None = None
        self._stop = False
        self._started = False

    def start(self) -> "CounterClock":
        if self._thread is not None and self._thread.is_alive():
            raise AlreadyRunning("counter thread already running")
        self._stop = False
        self._started = True
        self._thread = threading.Thread(target=self._run, name="clock-counter", daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop:
            self._ticks += 1

    def stop(self) -> None:
        self._stop = True
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    @property
    def ticks(self) -> int:
        return self._ticks

    def now_us(self) -> int:
        if not self._started:
            raise NotStarted("clock not started")
        return counter_to_us(self._ticks, self.cpufreq)


def start_clock(cpufreq: float = DEFAULT_CPUFREQ) -> CounterClock:
    """Create and start a counter clock."""
    return CounterClock(cpufreq).start()


class SimClock:
    """Deterministic clock advanced explicitly by the experiment runner."""

    def __init__(self, start_us: int = 0):
        self._now = int(start_us)

    def now_us(self) -> int:
        return self._now

    def advance_us(self, delta: int) -> int:
        if delta < 0:
            raise ValueError("simulated clock cannot move backwards")
        self._now += int(delta)
        return self._now

    def set_us(self, value: int) -> None:
        if value < self._now:
            raise ValueError("simulated clock cannot move backwards")
        self._now = int(value)
