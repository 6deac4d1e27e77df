"""Deterministic discrete-event engine.

Integer-nanosecond virtual clock, a binary-heap event queue with FIFO
tie-breaking at equal timestamps, and named random streams whose sequences
depend only on (seed, stream label) so adding a new random consumer never
perturbs existing ones.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# Time units on the integer-nanosecond clock.
NSEC = 1
USEC = 1_000
MSEC = 1_000_000
SEC = 1_000_000_000


class SchedulingError(RuntimeError):
    """Scheduling an event in the past; a programming error, never clamped."""


@dataclass(frozen=True)
class RunStats:
    """Outcome of one run_until() call.

    ``kind_counts`` is a sorted tuple of (event kind, count) pairs; together
    with ``events_processed`` and ``final_time_ns`` it forms the observable
    event log used by determinism checks.
    """

    events_processed: int
    final_time_ns: int
    kind_counts: tuple


class EventHandle:
    """Returned by schedule; supports cancellation until the event fires."""

    __slots__ = ("fire_at", "seq", "kind", "fn", "args", "state")

    PENDING = 0
    FIRED = 1
    CANCELLED = 2

    def __init__(self, fire_at: int, seq: int, kind: str, fn: Callable, args: tuple):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.fn = fn
        self.args = args
        self.state = EventHandle.PENDING

    def __lt__(self, other: "EventHandle") -> bool:
        # Tie-break by insertion sequence: FIFO at equal timestamps.
        if self.fire_at != other.fire_at:
            return self.fire_at < other.fire_at
        return self.seq < other.seq

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        st = {0: "pending", 1: "fired", 2: "cancelled"}[self.state]
        return f"EventHandle(t={self.fire_at}, seq={self.seq}, kind={self.kind}, {st})"


def _derive_seed(seed: int, stream_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stream_id}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


class RngStream:
    """Named random stream: (seed, stream_id) fully determines the sequence."""

    __slots__ = ("seed", "stream_id", "gen")

    def __init__(self, seed: int, stream_id: str):
        self.seed = seed
        self.stream_id = stream_id
        self.gen = np.random.Generator(np.random.PCG64(_derive_seed(seed, stream_id)))

    def uniform(self, lo: float, hi: float) -> float:
        """Draw from [lo, hi). Degenerate interval returns lo without a draw."""
        if lo > hi:
            raise ValueError(f"uniform bounds reversed: lo={lo} > hi={hi}")
        if lo == hi:
            return float(lo)
        return float(self.gen.uniform(lo, hi))

    def random(self) -> float:
        return float(self.gen.random())

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        return int(self.gen.integers(lo, hi))

    def exponential(self, mean: float) -> float:
        if mean <= 0:
            raise ValueError("exponential mean must be positive")
        return float(self.gen.exponential(mean))

    def pareto(self, shape: float, scale: float) -> float:
        """Classical Pareto with minimum ``scale``: P(X > x) = (scale/x)^shape."""
        u = self.gen.random()
        # Guard the astronomically unlikely u == 0.
        while u == 0.0:
            u = self.gen.random()
        return float(scale) * float(u) ** (-1.0 / float(shape))


class Simulator:
    """Single-threaded event loop over an integer-nanosecond clock.

    Independent Simulator instances share no state and may run in parallel
    processes; one instance must never be driven from two threads.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now = 0
        self._seq = 0
        self._heap: list[EventHandle] = []
        self._events_processed = 0
        self._kind_counts: dict[str, int] = {}
        self._streams: dict[str, RngStream] = {}

    @property
    def now(self) -> int:
        return self._now

    def rng(self, stream_id: str) -> RngStream:
        """Per-label random stream, created on first use and then reused."""
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = RngStream(self.seed, stream_id)
            self._streams[stream_id] = stream
        return stream

    def at(self, fire_at: int, kind: str, fn: Callable, *args) -> EventHandle:
        """Schedule ``fn(*args)`` at absolute time ``fire_at``."""
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule {kind!r} at {fire_at} ns: clock is {self._now} ns"
            )
        handle = EventHandle(fire_at, self._seq, kind, fn, args)
        self._seq += 1
        heapq.heappush(self._heap, handle)
        return handle

    def after(self, delay: int, kind: str, fn: Callable, *args) -> EventHandle:
        return self.at(self._now + delay, kind, fn, *args)

    def cancel(self, handle: EventHandle) -> bool:
        """True iff the event had not yet fired; cancelled events never run."""
        if handle.state != EventHandle.PENDING:
            return False
        handle.state = EventHandle.CANCELLED
        return True

    def pending(self) -> int:
        return sum(1 for h in self._heap if h.state == EventHandle.PENDING)

    def run_until(self, limit: int, stop: Optional[Callable[[], bool]] = None) -> RunStats:
        """Process every event with fire_at <= limit in (fire_at, seq) order.

        The clock advances to ``limit`` when the queue drains (or past-limit
        events remain); if ``stop`` returns true after some event, the loop
        exits with the clock at that event's time.
        """
        stopped = False
        heap = self._heap
        while heap and heap[0].fire_at <= limit:
            ev = heapq.heappop(heap)
            if ev.state == EventHandle.CANCELLED:
                continue
            self._now = ev.fire_at
            ev.state = EventHandle.FIRED
            self._events_processed += 1
            self._kind_counts[ev.kind] = self._kind_counts.get(ev.kind, 0) + 1
            ev.fn(*ev.args)
            if stop is not None and stop():
                stopped = True
                break
        if not stopped and limit > self._now:
            self._now = limit
        return RunStats(
            events_processed=self._events_processed,
            final_time_ns=self._now,
            kind_counts=tuple(sorted(self._kind_counts.items())),
        )
