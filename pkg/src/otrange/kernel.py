"""Deterministic discrete-event core.

One simulated clock, totally ordered execution, named random substreams.
Simulated time is integer milliseconds. Events fire in (fire_at, seq) order
where seq is assigned at scheduling time, so equal-time events replay in the
exact order they were scheduled. External threads may hand work in through
inject(); injected callables run between events, never concurrently with one.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable


class StopReason(Enum):
    HORIZON_REACHED = "horizon-reached"
    EVENT_BUDGET = "event-budget"
    QUEUE_EMPTY = "queue-empty"
    EXTERNALLY_PAUSED = "externally-paused"


class ScheduleError(ValueError):
    """An action was scheduled into the past."""


@dataclass(frozen=True)
class RunLimits:
    """Bounds for a single run_until call."""

    horizon_ms: int
    max_events: int = 1 << 62

    def __post_init__(self):
        if self.horizon_ms <= 0:
            raise ValueError("horizon_ms must be positive")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")


@dataclass(slots=True)
class TimedAction:
    """Queue entry; also serves as the cancellation handle."""

    fire_at: int
    seq: int
    origin: str
    action: Callable[[], None]
    cancelled: bool = False


class SimKernel:
    """Single-threaded event loop owning the simulated clock."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._queue: list[tuple[int, int, TimedAction]] = []
        self._rngs: dict[str, random.Random] = {}
        self._injected: deque = deque()
        self._inject_lock = threading.Lock()
        self._pause_requested = False

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, action: Callable[[], None], origin: str = "") -> TimedAction:
        if fire_at < self._now:
            raise ScheduleError(
                f"cannot schedule at t={fire_at}ms: clock is already at t={self._now}ms"
            )
        entry = TimedAction(fire_at, self._seq, origin, action)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, entry.seq, entry))
        return entry

    def cancel(self, handle: TimedAction) -> None:
        """Cancelling before fire time guarantees non-execution; after, a no-op."""
        handle.cancelled = True

    def pause(self) -> None:
        """Request a stop at the next event boundary. Thread-safe."""
        self._pause_requested = True

    def inject(self, fn: Callable[[], None]) -> None:
        """Queue a callable to run between events. Thread-safe."""
        with self._inject_lock:
            self._injected.append(fn)

    def rng(self, name: str) -> random.Random:
        """Named random substream, derived from (seed, name) only.

        Substreams keep modules from perturbing each other's draws: adding a
        consumer never changes what an existing consumer sees.
        """
        stream = self._rngs.get(name)
        if stream is None:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
            stream = random.Random(int.from_bytes(digest[:8], "big"))
            self._rngs[name] = stream
        return stream

    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def run_until(self, limits: RunLimits) -> StopReason:
        """Execute events in order until a limit is hit.

        Postcondition: every non-cancelled event with fire_at <= horizon has
        executed (unless the event budget or a pause intervened) and now() has
        advanced to min(horizon, last event time) but never moved backwards.
        """
        executed = 0
        queue = self._queue
        horizon = limits.horizon_ms
        while True:
            if self._injected:
                self._drain_injected()
            if self._pause_requested:
                self._pause_requested = False
                return StopReason.EXTERNALLY_PAUSED
            while queue and queue[0][2].cancelled:
                heapq.heappop(queue)
            if not queue:
                if horizon > self._now:
                    self._now = horizon
                return StopReason.QUEUE_EMPTY
            fire_at = queue[0][0]
            if fire_at > horizon:
                if horizon > self._now:
                    self._now = horizon
                return StopReason.HORIZON_REACHED
            _, _, entry = heapq.heappop(queue)
            self._now = fire_at
            entry.action()
            executed += 1
            if executed >= limits.max_events:
                return StopReason.EVENT_BUDGET

    def _drain_injected(self) -> None:
        with self._inject_lock:
            batch = list(self._injected)
            self._injected.clear()
        for fn in batch:
            fn()
