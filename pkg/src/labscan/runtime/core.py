"""In-process device runtime: registry, goal store, serial executors.

One registered device gets one executor thread; driver generators never
overlap per device.  All waiting goes through the runtime clock, so the
whole thing runs unmodified on the virtual clock (fast, deterministic) or
the wall clock (live serving).  The wire layers in stream.py/bridge.py are
thin translations over this object.
"""
from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field

from labscan.clock import Actor, Clock, WorkQueue
from labscan.driver import ActionHandler, DriverContext, DriverError, GoalRejected
from labscan.protocol import (
    ActionGoal,
    ActionSpec,
    GoalEvent,
    GoalState,
    GoalStatus,
    SchemaError,
    is_terminal,
    validate_params,
)

log = logging.getLogger(__name__)

GOAL_HISTORY_LIMIT = 256


class RegistrationError(ValueError):
    """Duplicate device id or a handler table not matching the specs."""


class NotFoundError(LookupError):
    """Unknown device, action or goal id."""


@dataclass(frozen=True)
class DeviceDescriptor:
    device_id: str
    display_name: str
    actions: tuple[ActionSpec, ...]
    endpoint: str = ""

    def to_public(self) -> dict:
        return {
            "device_id": self.device_id,
            "display_name": self.display_name,
            "endpoint": self.endpoint,
            "actions": [a.to_public() for a in self.actions],
        }


@dataclass
class _GoalRecord:
    goal: ActionGoal
    status: GoalStatus
    ctx: DriverContext
    subscribers: list = field(default_factory=list)


class _DeviceHost:
    def __init__(self, descriptor: DeviceDescriptor,
                 handlers: dict[str, ActionHandler], status_fn, started_at):
        self.descriptor = descriptor
        self.handlers = handlers
        self.status_fn = status_fn
        self.started_at = started_at
        self.restarts = 0
        self.goals_handled = 0
        self.current_goal_id: str | None = None
        self.history: deque[str] = deque()
        self.queue: WorkQueue | None = None
        self.thread: threading.Thread | None = None


class DeviceRuntime:
    """Hosts devices and runs their goals on per-device serial executors."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self._lock = threading.RLock()
        self._devices: dict[str, _DeviceHost] = {}
        self._goals: dict[str, _GoalRecord] = {}
        self._evicted_live: set[str] = set()
        self._goal_counter = 0

    # ------------------------------------------------------------- registry

    def register_device(self, descriptor: DeviceDescriptor,
                        handlers: dict[str, ActionHandler],
                        status_fn=None) -> None:
        with self._lock:
            if descriptor.device_id in self._devices:
                raise RegistrationError(
                    f"device {descriptor.device_id!r} already registered")
            spec_names = {a.action_name for a in descriptor.actions}
            if not spec_names:
                raise RegistrationError(
                    f"device {descriptor.device_id!r} exposes no actions")
            if set(handlers) != spec_names:
                raise RegistrationError(
                    f"handler table for {descriptor.device_id!r} does not "
                    f"match its action specs: specs {sorted(spec_names)}, "
                    f"handlers {sorted(handlers)}")
            host = _DeviceHost(descriptor, dict(handlers), status_fn,
                               started_at=self.clock.now())
            self._devices[descriptor.device_id] = host
        # queue must exist before the first submit, so the actor is
        # registered here instead of via clock.spawn
        actor = self.clock.register(f"exec-{descriptor.device_id}")
        host.queue = self.clock.make_queue(actor)

        def runner() -> None:
            try:
                self._executor_loop(host, actor)
            finally:
                self.clock.unregister(actor)

        host.thread = threading.Thread(
            target=runner, name=f"exec-{descriptor.device_id}", daemon=True)
        host.thread.start()

    def describe(self) -> list[dict]:
        with self._lock:
            return [h.descriptor.to_public() for h in self._devices.values()]

    def device_status(self, device_id: str) -> dict:
        with self._lock:
            host = self._devices.get(device_id)
            if host is None:
                raise NotFoundError(f"unknown device {device_id!r}")
            detail = host.status_fn() if host.status_fn else {}
            return {
                "device_id": device_id,
                "busy": host.current_goal_id is not None,
                "active_goal_id": host.current_goal_id,
                "started_at": host.started_at,
                "uptime_s": self.clock.now() - host.started_at,
                "restarts": host.restarts,
                "goals_handled": host.goals_handled,
                "detail": detail,
            }

    # ---------------------------------------------------------------- goals

    def submit_goal(self, device_id: str, action_name: str, params: dict,
                    goal_id: str | None = None, subscriber=None) -> str:
        """Submit a goal; returns its id (existing id on duplicate submit).

        ``subscriber`` is attached atomically with admission, so a caller
        that wants every feedback/result event cannot race the executor.
        """
        replay = None
        notify = []
        with self._lock:
            if goal_id is not None and goal_id in self._goals:
                rec = self._goals[goal_id]
                if (rec.goal.device_id != device_id
                        or rec.goal.action_name != action_name):
                    raise ValueError(
                        f"goal id {goal_id!r} already used for "
                        f"{rec.goal.device_id}/{rec.goal.action_name}")
                # duplicate submit: the driver ran (or still runs) once
                if subscriber is not None:
                    if is_terminal(rec.status.state):
                        replay = self._result_payload(rec)
                    else:
                        rec.subscribers.append(subscriber)
            else:
                host = self._devices.get(device_id)
                if host is None:
                    raise NotFoundError(f"unknown device {device_id!r}")
                spec = next((a for a in host.descriptor.actions
                             if a.action_name == action_name), None)
                if spec is None:
                    raise NotFoundError(
                        f"device {device_id!r} has no action {action_name!r}")
                if goal_id is None:
                    self._goal_counter += 1
                    goal_id = f"g{self._goal_counter:06d}"
                goal = ActionGoal(goal_id=goal_id, device_id=device_id,
                                  action_name=action_name,
                                  params=dict(params),
                                  submitted_at=self.clock.now())
                ctx = DriverContext(
                    clock=self.clock, goal_id=goal_id,
                    _feedback_sink=self._feedback_sink(goal_id))
                rec = _GoalRecord(goal=goal, status=GoalStatus(), ctx=ctx)
                if subscriber is not None:
                    rec.subscribers.append(subscriber)
                self._goals[goal_id] = rec
                self._remember(host, goal_id)

                rejection = self._admission_error(host, spec, params)
                if rejection is not None:
                    code, message = rejection
                    rec.status.apply(GoalEvent.REJECT,
                                     result={"code": code,
                                             "message": message})
                    notify = self._collect(rec)
                else:
                    goal.params = validate_params(spec, goal.params)
                    rec.status.apply(GoalEvent.ACCEPT)
                    host.current_goal_id = goal_id
                    host.queue.put(goal_id)
        if replay is not None:
            subscriber("result", replay)
        self._notify(notify)
        return goal_id

    def _admission_error(self, host, spec, params):
        if host.current_goal_id is not None:
            return ("BUSY",
                    f"device {host.descriptor.device_id!r} is running goal "
                    f"{host.current_goal_id}")
        try:
            filled = validate_params(spec, params)
            handler = host.handlers[spec.action_name]
            if handler.validate is not None:
                handler.validate(filled)
        except SchemaError as exc:
            return ("BAD_PARAMS", str(exc))
        except GoalRejected as exc:
            return (exc.code, exc.message)
        return None

    def cancel_goal(self, goal_id: str) -> dict:
        with self._lock:
            rec = self._goals.get(goal_id)
            if rec is None:
                raise NotFoundError(f"unknown goal {goal_id!r}")
            state = rec.status.state
            if is_terminal(state):
                ack = {"goal_id": goal_id, "state": state.value,
                       "note": "goal already terminal; cancel is a no-op"}
                notify = []
            elif state is GoalState.PENDING:
                # never started: reject in place, executor will skip it
                rec.ctx.request_cancel()
                rec.status.apply(GoalEvent.REJECT,
                                 result={"code": "CANCELED_BEFORE_START",
                                         "message": "cancel before start"})
                self._on_terminal(rec)
                ack = {"goal_id": goal_id, "state": rec.status.state.value,
                       "note": "canceled before start"}
                notify = self._collect(rec)
            elif state is GoalState.CANCELING:
                ack = {"goal_id": goal_id, "state": state.value,
                       "note": "cancel already in progress"}
                notify = []
            else:
                rec.ctx.request_cancel()
                rec.status.apply(GoalEvent.CANCEL_REQUEST)
                ack = {"goal_id": goal_id, "state": rec.status.state.value,
                       "note": "cancel requested"}
                notify = self._collect(rec)
        self._notify(notify)
        return ack

    def poll_status(self, goal_id: str) -> dict:
        with self._lock:
            rec = self._goals.get(goal_id)
            if rec is None:
                raise NotFoundError(f"unknown goal {goal_id!r}")
            snap = rec.status.snapshot()
            snap["goal_id"] = goal_id
            snap["device_id"] = rec.goal.device_id
            snap["action"] = rec.goal.action_name
            return snap

    def subscribe(self, goal_id: str, callback) -> None:
        """callback(kind: str, payload: dict) on feedback/status/result.

        Fires from the executor thread; keep callbacks non-blocking.  A
        subscription to an already-terminal goal immediately replays the
        result event.
        """
        replay = None
        with self._lock:
            rec = self._goals.get(goal_id)
            if rec is None:
                raise NotFoundError(f"unknown goal {goal_id!r}")
            if is_terminal(rec.status.state):
                replay = self._result_payload(rec)
            else:
                rec.subscribers.append(callback)
        if replay is not None:
            callback("result", replay)

    # ------------------------------------------------------------ execution

    def _executor_loop(self, host: _DeviceHost, actor: Actor) -> None:
        while True:
            goal_id = host.queue.get(actor)
            if goal_id is None:
                return
            self._run_goal(host, actor, goal_id)

    def _run_goal(self, host: _DeviceHost, actor: Actor, goal_id: str) -> None:
        with self._lock:
            rec = self._goals.get(goal_id)
            if rec is None or rec.status.state is not GoalState.PENDING:
                return   # canceled before start
            rec.status.apply(GoalEvent.START)
            handler = host.handlers[rec.goal.action_name]
            notify = self._collect(rec)
        self._notify(notify)

        event, result = GoalEvent.SUCCEED, {}
        try:
            gen = handler.run(rec.ctx, **rec.goal.params)
            while True:
                delay = next(gen)
                if delay:
                    self.clock.sleep(actor, float(delay))
        except StopIteration as stop:
            result = stop.value if isinstance(stop.value, dict) else {}
        except DriverError as exc:
            event, result = GoalEvent.FAIL, {"error": str(exc)}
        except Exception as exc:   # driver bug: fail the goal, keep serving
            log.exception("driver for %s/%s crashed",
                          host.descriptor.device_id, rec.goal.action_name)
            event, result = GoalEvent.FAIL, {
                "error": f"{type(exc).__name__}: {exc}"}

        with self._lock:
            if rec.status.state is GoalState.CANCELING:
                if event is GoalEvent.SUCCEED:
                    event = GoalEvent.CANCEL_DONE
            rec.status.apply(event, result=result)
            self._on_terminal(rec)
            host.goals_handled += 1
            notify = self._collect(rec)
        self._notify(notify)

    def shutdown(self) -> None:
        with self._lock:
            hosts = list(self._devices.values())
        for host in hosts:
            if host.queue is not None:
                host.queue.put(None)

    # ------------------------------------------------------------- plumbing

    def _feedback_sink(self, goal_id: str):
        def sink(payload: dict) -> None:
            with self._lock:
                rec = self._goals.get(goal_id)
                if rec is None or is_terminal(rec.status.state):
                    return
                rec.status.apply(GoalEvent.FEEDBACK, feedback=payload)
                subs = [(cb, "feedback",
                         {"goal_id": goal_id, "feedback": dict(payload)})
                        for cb in rec.subscribers]
            for cb, kind, data in subs:
                cb(kind, data)
        return sink

    def _on_terminal(self, rec: _GoalRecord) -> None:
        host = self._devices.get(rec.goal.device_id)
        if host is not None and host.current_goal_id == rec.goal.goal_id:
            host.current_goal_id = None
        if rec.goal.goal_id in self._evicted_live:
            self._evicted_live.discard(rec.goal.goal_id)
            self._goals.pop(rec.goal.goal_id, None)

    def _remember(self, host: _DeviceHost, goal_id: str) -> None:
        host.history.append(goal_id)
        while len(host.history) > GOAL_HISTORY_LIMIT:
            old = host.history.popleft()
            old_rec = self._goals.get(old)
            if old_rec is not None and not is_terminal(old_rec.status.state):
                # keep live goals addressable until they finish
                self._evicted_live.add(old)
            else:
                self._goals.pop(old, None)

    def _result_payload(self, rec: _GoalRecord) -> dict:
        return {"goal_id": rec.goal.goal_id,
                "state": rec.status.state.value,
                "result": dict(rec.status.result)}

    def _collect(self, rec: _GoalRecord):
        """Status/result notifications for subscribers; call under lock."""
        state = rec.status.state
        if is_terminal(state):
            payload = self._result_payload(rec)
            out = [(cb, "result", payload) for cb in rec.subscribers]
            rec.subscribers = []
            return out
        payload = {"goal_id": rec.goal.goal_id, "state": state.value}
        return [(cb, "status", payload) for cb in rec.subscribers]

    def _notify(self, calls) -> None:
        for cb, kind, payload in calls:
            try:
                cb(kind, payload)
            except Exception:
                log.exception("goal subscriber failed")
