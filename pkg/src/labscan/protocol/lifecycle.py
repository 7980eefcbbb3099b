"""Goal lifecycle state machine.

The machine is fixed and pure; the runtime replays it for every goal:

    PENDING   --start-->  ACTIVE      --succeed-->  SUCCEEDED
    PENDING   --reject--> REJECTED    --fail----->  FAILED
    ACTIVE    --cancel_request--> CANCELING --cancel_done--> CANCELED
    CANCELING may still finish with succeed/fail (driver beat the cancel)

``accept`` records the admission decision without changing state (the goal
stays PENDING until its executor starts it).  ``feedback`` self-loops in
ACTIVE and CANCELING.  The four terminal states absorb every event as an
error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class GoalState(str, Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"
    CANCELING = "CANCELING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    CANCELED = "CANCELED"
    REJECTED = "REJECTED"


class GoalEvent(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    START = "start"
    FEEDBACK = "feedback"
    SUCCEED = "succeed"
    FAIL = "fail"
    CANCEL_REQUEST = "cancel_request"
    CANCEL_DONE = "cancel_done"


TERMINAL_STATES = frozenset(
    {GoalState.SUCCEEDED, GoalState.FAILED, GoalState.CANCELED, GoalState.REJECTED}
)

_TRANSITIONS: dict[GoalState, dict[GoalEvent, GoalState]] = {
    GoalState.PENDING: {
        GoalEvent.ACCEPT: GoalState.PENDING,
        GoalEvent.START: GoalState.ACTIVE,
        GoalEvent.REJECT: GoalState.REJECTED,
    },
    GoalState.ACTIVE: {
        GoalEvent.FEEDBACK: GoalState.ACTIVE,
        GoalEvent.SUCCEED: GoalState.SUCCEEDED,
        GoalEvent.FAIL: GoalState.FAILED,
        GoalEvent.CANCEL_REQUEST: GoalState.CANCELING,
    },
    GoalState.CANCELING: {
        GoalEvent.FEEDBACK: GoalState.CANCELING,
        GoalEvent.CANCEL_DONE: GoalState.CANCELED,
        GoalEvent.SUCCEED: GoalState.SUCCEEDED,
        GoalEvent.FAIL: GoalState.FAILED,
    },
}


class TransitionError(Exception):
    def __init__(self, state: GoalState, event: GoalEvent):
        super().__init__(f"event {event.value!r} is illegal in state {state.value}")
        self.state = state
        self.event = event


def is_terminal(state: GoalState) -> bool:
    return state in TERMINAL_STATES


def goal_transition(state: GoalState, event: GoalEvent) -> GoalState:
    """Pure transition function; raises TransitionError on illegal pairs."""
    legal = _TRANSITIONS.get(state)
    if legal is None or event not in legal:
        raise TransitionError(state, event)
    return legal[event]


@dataclass
class GoalStatus:
    """Mutable status snapshot a runtime keeps per goal.

    Invariants enforced here: terminal states are absorbing, feedback only
    updates while ACTIVE or CANCELING, result only lands with a terminal
    transition.
    """

    state: GoalState = GoalState.PENDING
    feedback: dict = field(default_factory=dict)
    result: dict = field(default_factory=dict)

    def apply(self, event: GoalEvent, *, feedback: dict | None = None,
              result: dict | None = None) -> GoalState:
        new_state = goal_transition(self.state, event)
        if event is GoalEvent.FEEDBACK and feedback is not None:
            self.feedback.update(feedback)
        self.state = new_state
        if new_state in TERMINAL_STATES and result is not None:
            self.result = dict(result)
        return new_state

    def snapshot(self) -> dict:
        return {
            "state": self.state.value,
            "feedback": dict(self.feedback),
            "result": dict(self.result),
        }
