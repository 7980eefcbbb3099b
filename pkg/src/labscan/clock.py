"""Monotonic clocks for the device runtime.

Two implementations share one interface:

* :class:`WallClock` maps simulated time 1:1 (or scaled) onto the host's
  monotonic clock.  Used when serving devices to live network clients.
* :class:`SimClock` is a small discrete-event kernel.  Threads register as
  actors; whenever every actor is either sleeping or idle, the clock jumps
  straight to the earliest deadline and wakes exactly one actor.  Runs are
  fast (no real waiting) and deterministic (single-wake policy, ties broken
  by registration order).

All timestamps are monotonic simulated seconds, never wall-clock dates.
"""
from __future__ import annotations

import threading
import time
from collections import deque
from typing import Any, Callable, Optional

_RUNNING = "running"
_SLEEPING = "sleeping"
_IDLE = "idle"

# Wall-clock seconds a SimClock actor may wait without the kernel making
# progress before we declare the simulation wedged.
STALL_LIMIT_S = 120.0


class SimStalledError(RuntimeError):
    """The virtual clock could not advance within the stall limit."""


class Actor:
    """A thread participating in simulated time."""

    __slots__ = ("name", "state", "deadline", "order")

    def __init__(self, name: str, order: int):
        self.name = name
        self.state = _RUNNING
        self.deadline = 0.0
        self.order = order

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Actor({self.name}, {self.state})"


class Clock:
    """Interface shared by WallClock and SimClock."""

    def now(self) -> float:
        raise NotImplementedError

    def register(self, name: str) -> Actor:
        raise NotImplementedError

    def unregister(self, actor: Actor) -> None:
        raise NotImplementedError

    def sleep(self, actor: Actor, duration: float) -> None:
        raise NotImplementedError

    def make_queue(self, consumer: Actor) -> "WorkQueue":
        raise NotImplementedError

    def spawn(self, name: str, fn: Callable[[Actor], None]) -> threading.Thread:
        """Run fn on a new thread registered as an actor for its lifetime."""
        actor = self.register(name)

        def runner() -> None:
            try:
                fn(actor)
            finally:
                self.unregister(actor)

        t = threading.Thread(target=runner, name=name, daemon=True)
        t.start()
        return t


class WorkQueue:
    """FIFO handed to a single consumer actor; producers may be any thread."""

    def put(self, item: Any) -> None:
        raise NotImplementedError

    def get(self, consumer: Actor) -> Any:
        raise NotImplementedError


class WallClock(Clock):
    """Simulated time driven by the host monotonic clock.

    time_scale > 1 runs the simulation faster than real time; 1.0 is the
    --realtime mapping.
    """

    def __init__(self, time_scale: float = 1.0):
        if time_scale <= 0:
            raise ValueError("time_scale must be > 0")
        self.time_scale = time_scale
        self._t0 = time.monotonic()
        self._order = 0

    def now(self) -> float:
        return (time.monotonic() - self._t0) * self.time_scale

    def register(self, name: str) -> Actor:
        self._order += 1
        return Actor(name, self._order)

    def unregister(self, actor: Actor) -> None:
        pass

    def sleep(self, actor: Actor, duration: float) -> None:
        if duration > 0:
            time.sleep(duration / self.time_scale)

    def make_queue(self, consumer: Actor) -> WorkQueue:
        return _WallQueue()


class _WallQueue(WorkQueue):
    def __init__(self) -> None:
        self._items: deque = deque()
        self._cond = threading.Condition()

    def put(self, item: Any) -> None:
        with self._cond:
            self._items.append(item)
            self._cond.notify()

    def get(self, consumer: Actor) -> Any:
        with self._cond:
            while not self._items:
                self._cond.wait()
            return self._items.popleft()


class SimClock(Clock):
    """Discrete-event virtual clock.

    Invariant: at most one actor is RUNNING at any instant once all actors
    have settled, so interleavings (and therefore recorded timestamps) are
    reproducible for a fixed actor registration order.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._cond = threading.Condition()
        self._actors: list[Actor] = []
        self._order = 0

    def now(self) -> float:
        with self._cond:
            return self._now

    def register(self, name: str) -> Actor:
        with self._cond:
            self._order += 1
            actor = Actor(name, self._order)
            self._actors.append(actor)
            return actor

    def unregister(self, actor: Actor) -> None:
        with self._cond:
            if actor in self._actors:
                self._actors.remove(actor)
                self._advance_if_blocked()

    def sleep(self, actor: Actor, duration: float) -> None:
        with self._cond:
            actor.state = _SLEEPING
            actor.deadline = self._now + max(duration, 0.0)
            self._advance_if_blocked()
            self._wait_until_running(actor)

    def make_queue(self, consumer: Actor) -> WorkQueue:
        return _SimQueue(self, consumer)

    # Internal: all methods below assume self._cond is held.

    def _wait_until_running(self, actor: Actor) -> None:
        waited = 0.0
        while actor.state != _RUNNING:
            if not self._cond.wait(timeout=5.0):
                waited += 5.0
                if waited >= STALL_LIMIT_S:
                    raise SimStalledError(
                        f"virtual clock stalled; {actor.name} waited "
                        f"{waited:.0f}s wall time at t={self._now:.3f}"
                    )
                self._advance_if_blocked()

    def _advance_if_blocked(self) -> None:
        if any(a.state == _RUNNING for a in self._actors):
            return
        sleepers = [a for a in self._actors if a.state == _SLEEPING]
        if not sleepers:
            return  # fully idle: producers outside the sim must wake us
        nxt = min(sleepers, key=lambda a: (a.deadline, a.order))
        if nxt.deadline > self._now:
            self._now = nxt.deadline
        nxt.state = _RUNNING
        self._cond.notify_all()

    def _mark_runnable(self, actor: Actor) -> None:
        if actor.state == _IDLE:
            actor.state = _RUNNING
        self._cond.notify_all()

    def _idle_wait(self, actor: Actor, has_work: Callable[[], bool]) -> None:
        waited = 0.0
        while not has_work():
            actor.state = _IDLE
            self._advance_if_blocked()
            if not self._cond.wait(timeout=5.0):
                waited += 5.0
                if waited >= STALL_LIMIT_S and not has_work():
                    raise SimStalledError(
                        f"{actor.name} idle-starved at t={self._now:.3f}"
                    )
        actor.state = _RUNNING


class _SimQueue(WorkQueue):
    def __init__(self, clock: SimClock, consumer: Actor):
        self._clock = clock
        self._consumer = consumer
        self._items: deque = deque()

    def put(self, item: Any) -> None:
        with self._clock._cond:
            self._items.append(item)
            self._clock._mark_runnable(self._consumer)

    def get(self, consumer: Actor) -> Any:
        with self._clock._cond:
            self._clock._idle_wait(consumer, lambda: bool(self._items))
            return self._items.popleft()


def make_clock(mode: str = "sim", time_scale: float = 1.0) -> Clock:
    """Build a clock: mode 'sim' (virtual) or 'wall' (real time, scalable)."""
    if mode == "sim":
        return SimClock()
    if mode == "wall":
        return WallClock(time_scale)
    raise ValueError(f"unknown clock mode {mode!r}")
