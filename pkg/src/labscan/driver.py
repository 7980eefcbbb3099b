"""Driver-side contract shared by the simulators and the runtime.

A driver handler is a generator function ``handler(ctx, **params)`` that
yields sleep durations in simulated seconds and returns its result dict via
``return``.  Long-running handlers should call ``ctx.feedback(...)`` between
steps and poll ``ctx.cancel_requested`` at step boundaries; cancellation is
cooperative, the runtime never kills a driver.

``validate`` hooks run while the goal is still pending, before the driver is
invoked, so precondition failures reject the goal instead of failing it.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from labscan.clock import Clock


class DriverError(Exception):
    """Raised by a driver to fail the goal; the message lands in the result."""


class GoalRejected(Exception):
    """Raised by a validate hook to reject a goal before it starts."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class DriverContext:
    """Everything a running driver may touch."""

    clock: Clock
    goal_id: str
    _feedback_sink: Callable[[dict], None]
    _cancel_event: threading.Event = field(default_factory=threading.Event)

    def feedback(self, **payload) -> None:
        self._feedback_sink(dict(payload))

    @property
    def cancel_requested(self) -> bool:
        return self._cancel_event.is_set()

    def request_cancel(self) -> None:
        self._cancel_event.set()


# validate(params) raises GoalRejected; run(ctx, **params) is the generator.
@dataclass
class ActionHandler:
    run: Callable
    validate: Optional[Callable[[dict], None]] = None
