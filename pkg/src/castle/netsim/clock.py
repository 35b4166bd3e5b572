"""Schedulers driving the session engine.

The engine only ever asks for "call me at time t"; supplying a virtual
loop makes whole sessions deterministic and far faster than real time,
while the realtime loop runs the same logic against the wall clock for
loopback-socket sessions.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Optional


class ScheduledCall:
    __slots__ = ("at_ms", "order", "fn", "cancelled")

    def __init__(self, at_ms: float, order: int, fn: Callable[[], None]):
        self.at_ms = at_ms
        self.order = order
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "ScheduledCall") -> bool:
        return (self.at_ms, self.order) < (other.at_ms, other.order)


class EventLoop:
    """Deterministic virtual-time scheduler.

    Callbacks run strictly in (time, insertion) order; ``now_ms`` only
    moves when events are executed, so identical schedules replay
    identically.
    """

    def __init__(self) -> None:
        self.now_ms = 0.0
        self._heap: list[ScheduledCall] = []
        self._counter = itertools.count()

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> ScheduledCall:
        return self.schedule_at(self.now_ms + max(0.0, delay_ms), fn)

    def schedule_at(self, at_ms: float, fn: Callable[[], None]) -> ScheduledCall:
        call = ScheduledCall(max(at_ms, self.now_ms), next(self._counter), fn)
        heapq.heappush(self._heap, call)
        return call

    def step(self) -> bool:
        """Run the next pending event; False when nothing is queued."""
        while self._heap:
            call = heapq.heappop(self._heap)
            if call.cancelled:
                continue
            self.now_ms = call.at_ms
            call.fn()
            return True
        return False

    def run_until(self, t_ms: float) -> None:
        """Run all events with timestamps <= t_ms, then advance the clock."""
        while self._heap:
            head = self._heap[0]
            if head.cancelled:
                heapq.heappop(self._heap)
                continue
            if head.at_ms > t_ms:
                break
            self.step()
        self.now_ms = max(self.now_ms, t_ms)

    def run_for(self, duration_ms: float) -> None:
        self.run_until(self.now_ms + duration_ms)

    def run_while(
        self,
        predicate: Callable[[], bool],
        max_ms: Optional[float] = None,
    ) -> bool:
        """Step events while ``predicate()`` holds; True if it went false."""
        deadline = None if max_ms is None else self.now_ms + max_ms
        while predicate():
            if deadline is not None and self.now_ms >= deadline:
                return False
            if not self.step():
                return False
        return True


class RealtimeLoop:
    """Wall-clock scheduler with the same surface as EventLoop.

    A single worker thread executes callbacks, so engine state is still
    only touched from one thread; other threads may schedule work (the
    socket reader does, with delay 0).
    """

    def __init__(self) -> None:
        self._heap: list[ScheduledCall] = []
        self._counter = itertools.count()
        self._cv = threading.Condition()
        self._stopping = False
        self._epoch = time.monotonic()
        self._thread: Optional[threading.Thread] = None

    @property
    def now_ms(self) -> float:
        return (time.monotonic() - self._epoch) * 1000.0

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> ScheduledCall:
        return self.schedule_at(self.now_ms + max(0.0, delay_ms), fn)

    def schedule_at(self, at_ms: float, fn: Callable[[], None]) -> ScheduledCall:
        call = ScheduledCall(at_ms, next(self._counter), fn)
        with self._cv:
            heapq.heappush(self._heap, call)
            self._cv.notify()
        return call

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cv:
            self._stopping = True
            self._cv.notify()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def _run(self) -> None:
        while True:
            with self._cv:
                while True:
                    if self._stopping:
                        return
                    while self._heap and self._heap[0].cancelled:
                        heapq.heappop(self._heap)
                    if not self._heap:
                        self._cv.wait()
                        continue
                    wait_ms = self._heap[0].at_ms - self.now_ms
                    if wait_ms <= 0:
                        call = heapq.heappop(self._heap)
                        break
                    self._cv.wait(timeout=wait_ms / 1000.0)
            try:
                call.fn()
            except Exception:  # engine callbacks must not kill the loop
                import traceback

                traceback.print_exc()
