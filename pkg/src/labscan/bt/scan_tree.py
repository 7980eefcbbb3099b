"""The raster-scan protocol tree.

The tree works the head of the blackboard's ``pending`` point list one
tick at a time: lift the head to the safe height, travel, descend, fire,
export the spectrum, reduce it, then pop the point.  Each step sits under
a retry wrapper, so a failed goal is re-dispatched (after backoff) before
the sequence can advance — a fire can therefore never be dispatched while
a move is still unresolved.  The root falls back to the work sequence
until ``pending`` is empty, at which point the tree returns SUCCESS.

Blackboard keys: ``pending`` (ordered point list, head = current),
``scan_at`` (last commanded xy), ``fire`` (last fire goal result),
``down`` (descent move result, position verified against tolerance),
``retries`` (cumulative retry count, bumped by the wrappers).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

from labscan.bt.nodes import (
    Action,
    BehaviorNode,
    Condition,
    Fallback,
    Retry,
    Sequence,
    TreeError,
    goal_action,
)

PENDING_KEY = "pending"
RETRY_KEY = "retries"


class RuntimeClient:
    """In-process submit/poll client over a DeviceRuntime."""

    def __init__(self, runtime):
        self.runtime = runtime

    def submit(self, device_id: str, action: str, params: dict) -> str:
        return self.runtime.submit_goal(device_id, action, params)

    def poll(self, goal_id: str) -> str:
        return self.runtime.poll_status(goal_id)["state"]

    def result(self, goal_id: str) -> dict:
        return self.runtime.poll_status(goal_id)["result"]

    def has_action(self, device_id: str, action: str) -> bool:
        for dev in self.runtime.describe():
            if dev["device_id"] == device_id:
                return any(a["action"] == action for a in dev["actions"])
        return False


@dataclass
class ScanBindings:
    """Everything the scan tree needs besides the grid itself."""

    client: object
    export: Callable = None      # export(bb): spectrum in bb["fire"] -> file
    analyze: Callable = None     # analyze(bb): reduction summary step
    finish_point: Callable = None  # finish_point(bb): persist + bookkeeping
    now: Callable[[], float] = field(default=time.monotonic)
    gantry_id: str = "gantry"
    spectrometer_id: str = "spectrometer"
    # per-axis landing tolerance for the descent move; None skips the check
    position_tol_mm: float | None = None


def build_scan_tree(grid, bindings: ScanBindings,
                    safe_z: float | None = None) -> BehaviorNode:
    """Compose the per-point scan sequence for ``grid``.

    ``grid`` provides ordered ``points`` (with .x/.y), the measurement
    height ``z`` and a travel height ``safe_z`` (overridable here).  The
    caller seeds ``bb[PENDING_KEY]`` with the points still to measure.
    """
    for fn_name in ("export", "analyze", "finish_point"):
        if getattr(bindings, fn_name) is None:
            raise TreeError(f"scan tree needs a {fn_name} binding")
    client = bindings.client
    if hasattr(client, "has_action"):
        missing = [f"{dev}.{act}" for dev, act in
                   ((bindings.gantry_id, "move"),
                    (bindings.spectrometer_id, "fire"))
                   if not client.has_action(dev, act)]
        if missing:
            raise TreeError("missing device bindings: " + ", ".join(missing))

    travel_z = grid.safe_z if safe_z is None else float(safe_z)
    if travel_z < grid.z:
        raise TreeError(f"safe height {travel_z} below measurement "
                        f"height {grid.z}")

    def up_params(bb):
        x, y = bb.get("scan_at", (0.0, 0.0))
        return {"x": x, "y": y, "z": travel_z}

    def xy_params(bb):
        pt = bb[PENDING_KEY][0]
        bb["scan_at"] = (pt.x, pt.y)
        return {"x": pt.x, "y": pt.y, "z": travel_z}

    def down_params(bb):
        pt = bb[PENDING_KEY][0]
        return {"x": pt.x, "y": pt.y, "z": grid.z}

    def down_verify(bb, result):
        # the stage has finite repeatability; re-move if it landed wide
        tol = bindings.position_tol_mm
        if tol is None:
            return True
        pt = bb[PENDING_KEY][0]
        ax, ay, az = result["position"]
        return (abs(ax - pt.x) <= tol and abs(ay - pt.y) <= tol
                and abs(az - grid.z) <= tol)

    def pop_point(bb):
        bindings.finish_point(bb)
        bb[PENDING_KEY].pop(0)
        bb.pop("fire", None)
        bb.pop("down", None)

    def retried(name, node):
        return Retry(f"retry_{name}", node, now=bindings.now,
                     counter_key=RETRY_KEY)

    steps = [
        retried("move_up", goal_action(
            "move_up", client, bindings.gantry_id, "move", up_params)),
        retried("move_xy", goal_action(
            "move_xy", client, bindings.gantry_id, "move", xy_params)),
        retried("move_down", goal_action(
            "move_down", client, bindings.gantry_id, "move", down_params,
            result_key="down", verify=down_verify)),
        retried("fire", goal_action(
            "fire", client, bindings.spectrometer_id, "fire", {},
            result_key="fire")),
        retried("export_csv", Action("export_csv", bindings.export)),
        retried("reduce", Action("reduce", bindings.analyze)),
        Action("pop_point", pop_point),
    ]
    return Fallback("scan", [
        Condition("all_measured", lambda bb: not bb[PENDING_KEY]),
        Sequence("measure_next", steps),
    ])
