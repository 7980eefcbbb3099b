"""Behavior-tree nodes and tick semantics.

Composites are reactive: every tick re-evaluates children from the left,
and a composite that returns a terminal status resets its subtree so the
next pass starts fresh.  ACTION leaves carry the memory instead — they
start their work once and latch the terminal status — which makes the
re-evaluation idempotent.  CONDITION leaves are stateless predicates.

The tree itself never blocks: device-bound actions dispatch a goal and
poll it, so one executor can tick at a fixed cadence regardless of how
long the underlying goals run.
"""
from __future__ import annotations

import enum
import logging
import time

log = logging.getLogger(__name__)


class TreeError(ValueError):
    """Malformed tree structure or leaf binding."""


class TickStatus(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class NodeKind(enum.Enum):
    PARALLEL = "PARALLEL"
    SEQUENCE = "SEQUENCE"
    FALLBACK = "FALLBACK"
    ACTION = "ACTION"
    CONDITION = "CONDITION"
    RETRY = "RETRY"

COMPOSITE_KINDS = frozenset(
    {NodeKind.PARALLEL, NodeKind.SEQUENCE, NodeKind.FALLBACK})


class Blackboard(dict):
    """Shared key->value store, written only by the tick executor."""


class BehaviorNode:
    kind: NodeKind

    def __init__(self, name: str, children=()):
        if not name:
            raise TreeError("node needs a non-empty name")
        self.name = name
        self.children = list(children)

    def tick(self, bb: Blackboard) -> TickStatus:
        raise NotImplementedError

    def reset(self) -> None:
        for child in self.children:
            child.reset()

    def __repr__(self) -> str:
        return f"<{self.kind.value} {self.name!r}>"


class _Composite(BehaviorNode):
    def __init__(self, name: str, children):
        super().__init__(name, children)
        if not self.children:
            raise TreeError(
                f"{self.kind.value} {name!r} needs at least one child")


class Sequence(_Composite):
    """SUCCESS if every child succeeds; stops at the first that does not."""

    kind = NodeKind.SEQUENCE

    def tick(self, bb: Blackboard) -> TickStatus:
        for child in self.children:
            status = child.tick(bb)
            if status is not TickStatus.SUCCESS:
                if status is TickStatus.FAILURE:
                    self.reset()
                return status
        self.reset()
        return TickStatus.SUCCESS


class Fallback(_Composite):
    """SUCCESS at the first child that does not fail; FAILURE if all do."""

    kind = NodeKind.FALLBACK

    def tick(self, bb: Blackboard) -> TickStatus:
        for child in self.children:
            status = child.tick(bb)
            if status is not TickStatus.FAILURE:
                if status is TickStatus.SUCCESS:
                    self.reset()
                return status
        self.reset()
        return TickStatus.FAILURE


class Parallel(_Composite):
    """Ticks every child; FAILURE if any fail, SUCCESS once all succeed."""

    kind = NodeKind.PARALLEL

    def tick(self, bb: Blackboard) -> TickStatus:
        statuses = [child.tick(bb) for child in self.children]
        if any(s is TickStatus.FAILURE for s in statuses):
            self.reset()
            return TickStatus.FAILURE
        if all(s is TickStatus.SUCCESS for s in statuses):
            self.reset()
            return TickStatus.SUCCESS
        return TickStatus.RUNNING


class Retry(BehaviorNode):
    """Converts child FAILURE into RUNNING and tries again after a backoff.

    The delay doubles from BASE_DELAY_S on consecutive failures and is
    capped at MAX_DELAY_S; a success resets the streak.  ``counter_key``
    names a blackboard counter bumped on every failure so callers can
    watch (and bound) how hard a step is struggling.
    """

    kind = NodeKind.RETRY
    BASE_DELAY_S = 0.5
    MAX_DELAY_S = 30.0

    def __init__(self, name: str, child: BehaviorNode, now=time.monotonic,
                 counter_key: str | None = None):
        super().__init__(name, [child])
        self.now = now
        self.counter_key = counter_key
        self._failures = 0
        self._resume_at: float | None = None

    def tick(self, bb: Blackboard) -> TickStatus:
        if self._resume_at is not None:
            if self.now() < self._resume_at:
                return TickStatus.RUNNING
            self._resume_at = None
        status = self.children[0].tick(bb)
        if status is TickStatus.FAILURE:
            delay = min(self.BASE_DELAY_S * 2.0 ** self._failures,
                        self.MAX_DELAY_S)
            self._failures += 1
            if self.counter_key is not None:
                bb[self.counter_key] = bb.get(self.counter_key, 0) + 1
            self._resume_at = self.now() + delay
            self.children[0].reset()
            return TickStatus.RUNNING
        if status is TickStatus.SUCCESS:
            self._failures = 0
        return status

    def reset(self) -> None:
        self._failures = 0
        self._resume_at = None
        super().reset()


class Condition(BehaviorNode):
    """Stateless predicate over the blackboard, evaluated every tick."""

    kind = NodeKind.CONDITION

    def __init__(self, name: str, predicate):
        super().__init__(name)
        self.predicate = predicate

    def tick(self, bb: Blackboard) -> TickStatus:
        return TickStatus.SUCCESS if self.predicate(bb) else TickStatus.FAILURE


class Action(BehaviorNode):
    """Memory-ful leaf: runs ``start`` once, then polls until terminal.

    ``start(bb)`` returns a token (a goal id, usually); ``poll(bb, token)``
    maps progress to a TickStatus.  A missing ``poll`` means the work is
    instantaneous.  Exceptions fail the leaf; the terminal status is
    latched until reset() so re-evaluation never re-dispatches.
    """

    kind = NodeKind.ACTION

    def __init__(self, name: str, start, poll=None):
        super().__init__(name)
        self.start = start
        self.poll = poll
        self._token = None
        self._started = False
        self._latched: TickStatus | None = None

    def tick(self, bb: Blackboard) -> TickStatus:
        if self._latched is not None:
            return self._latched
        try:
            if not self._started:
                self._token = self.start(bb)
                self._started = True
            if self.poll is None:
                self._latched = TickStatus.SUCCESS
                return self._latched
            status = self.poll(bb, self._token)
        except Exception:
            log.exception("action %r failed", self.name)
            self._latched = TickStatus.FAILURE
            return self._latched
        if status is not TickStatus.RUNNING:
            self._latched = status
        return status

    def reset(self) -> None:
        self._token = None
        self._started = False
        self._latched = None


_GOAL_TERMINALS = {
    "SUCCEEDED": TickStatus.SUCCESS,
    "FAILED": TickStatus.FAILURE,
    "REJECTED": TickStatus.FAILURE,
    "CANCELED": TickStatus.FAILURE,
}


def goal_action(name: str, client, device_id: str, action: str, params,
                result_key: str | None = None, verify=None) -> Action:
    """ACTION leaf bound to a device goal via a submit/poll client.

    ``params`` is a dict or a callable(bb) evaluated at dispatch time.  On
    success the goal result lands in ``bb[result_key]`` when given.  A
    ``verify(bb, result)`` hook can demote a succeeded goal to FAILURE when
    its result is unacceptable (e.g. a move that landed out of tolerance),
    which hands the step to the enclosing retry wrapper.
    """
    params_fn = params if callable(params) else (lambda bb: dict(params))

    def start(bb):
        return client.submit(device_id, action, params_fn(bb))

    def poll(bb, goal_id):
        status = _GOAL_TERMINALS.get(client.poll(goal_id),
                                     TickStatus.RUNNING)
        if status is TickStatus.SUCCESS:
            result = client.result(goal_id)
            if verify is not None and not verify(bb, result):
                return TickStatus.FAILURE
            if result_key is not None:
                bb[result_key] = result
        return status

    return Action(name, start, poll)


def validate_tree(root: BehaviorNode) -> None:
    """Structural checks; raises TreeError on the first violation."""
    seen: set[int] = set()

    def walk(node) -> None:
        if not isinstance(node, BehaviorNode):
            raise TreeError(f"{node!r} is not a BehaviorNode")
        if id(node) in seen:
            raise TreeError(f"node {node.name!r} appears twice in the tree")
        seen.add(id(node))
        if node.kind in COMPOSITE_KINDS and not node.children:
            raise TreeError(
                f"{node.kind.value} {node.name!r} has no children")
        if node.kind is NodeKind.RETRY and len(node.children) != 1:
            raise TreeError(f"RETRY {node.name!r} needs exactly one child")
        if node.kind in (NodeKind.ACTION, NodeKind.CONDITION) and node.children:
            raise TreeError(f"leaf {node.name!r} has children")
        for child in node.children:
            walk(child)

    walk(root)
    root._validated = True


def tick(root: BehaviorNode, bb: Blackboard) -> TickStatus:
    """One evaluation pass; validates the tree once per root."""
    if not getattr(root, "_validated", False):
        validate_tree(root)
    return root.tick(bb)
