"""Simulated 3-axis gantry.

Models a stepper-driven CNC frame: straight-line motion at a commanded feed
rate, position readout quantized to the step resolution, and a per-move
repeatability error drawn from a seeded RNG.  Travel limits, resolution and
repeatability follow the hardware the simulator stands in for
(730 x 810 x 100 mm, 0.02 mm steps, 0.05 mm sigma).
"""
from __future__ import annotations

import numpy as np

from labscan.driver import ActionHandler, DriverContext, GoalRejected
from labscan.protocol import ActionSpec, ParamSpec

TICK_S = 0.1
DEFAULT_FEED_MM_S = 20.0


class GantrySim:
    def __init__(
        self,
        clock,
        rng: np.random.Generator,
        limits=(730.0, 810.0, 100.0),
        resolution_mm: float = 0.02,
        repeatability_sigma_mm: float = 0.05,
    ):
        self.clock = clock
        self.rng = rng
        self.limits = np.asarray(limits, dtype=float)
        self.resolution_mm = float(resolution_mm)
        self.repeatability_sigma_mm = float(repeatability_sigma_mm)
        self._position = np.zeros(3)
        self.moving = False

    # -- state ------------------------------------------------------------

    def _quantize(self, pos: np.ndarray) -> np.ndarray:
        return np.round(pos / self.resolution_mm) * self.resolution_mm

    @property
    def position(self) -> list[float]:
        """Reported position, always a multiple of the step resolution."""
        return [float(v) for v in self._quantize(self._position)]

    def snapshot(self) -> dict:
        return {
            "position": self.position,
            "moving": self.moving,
            "limits": [float(v) for v in self.limits],
        }

    # -- drivers ----------------------------------------------------------

    def _validate_move(self, params: dict) -> None:
        target = np.array([params["x"], params["y"], params["z"]], dtype=float)
        if np.any(target < 0.0) or np.any(target > self.limits):
            raise GoalRejected(
                "OUT_OF_RANGE",
                f"target {target.tolist()} outside limits {self.limits.tolist()}",
            )
        if params["feed"] <= 0.0:
            raise GoalRejected("BAD_PARAMS", "feed must be positive")

    def _run_move(self, ctx: DriverContext, x: float, y: float, z: float,
                  feed: float):
        target = np.array([x, y, z], dtype=float)
        start = self._position.copy()
        distance = float(np.linalg.norm(target - start))
        if distance < 0.5 * self.resolution_mm:
            # Already there; no motion, no repeatability roll.
            return {"position": self.position, "traveled_mm": 0.0}
        duration = distance / feed
        self.moving = True
        try:
            t = 0.0
            while t < duration:
                if ctx.cancel_requested:
                    self._position = self._quantize(self._position)
                    return {
                        "position": self.position,
                        "traveled_mm": float(np.linalg.norm(self._position - start)),
                    }
                dt = min(TICK_S, duration - t)
                yield dt
                t += dt
                self._position = start + (target - start) * (t / duration)
                ctx.feedback(position=self.position,
                             progress=round(t / duration, 6))
            landed = target + self.rng.normal(0.0, self.repeatability_sigma_mm, 3)
            self._position = np.clip(self._quantize(landed), 0.0, self.limits)
            return {"position": self.position, "traveled_mm": distance}
        finally:
            self.moving = False

    def _run_home(self, ctx: DriverContext):
        start = self._position.copy()
        distance = float(np.linalg.norm(start))
        duration = distance / DEFAULT_FEED_MM_S
        self.moving = True
        try:
            t = 0.0
            while t < duration:
                if ctx.cancel_requested:
                    self._position = self._quantize(self._position)
                    return {"position": self.position, "homed": False}
                dt = min(TICK_S, duration - t)
                yield dt
                t += dt
                self._position = start * (1.0 - t / duration)
                ctx.feedback(position=self.position,
                             progress=round(t / duration, 6))
            # Homing re-references the axes: exact origin, no noise.
            self._position = np.zeros(3)
            return {"position": self.position, "homed": True}
        finally:
            self.moving = False

    def _run_stop(self, ctx: DriverContext):
        # The serial executor guarantees nothing else is running, so this is
        # an idle-state safety no-op; interrupting motion is done by
        # cancelling the move goal.
        return {"stopped": True, "position": self.position}
        yield  # pragma: no cover - marks this as a generator

    # -- registration -----------------------------------------------------

    def action_specs(self) -> list[ActionSpec]:
        return [
            ActionSpec(
                device_id="gantry",
                action_name="move",
                params=(
                    ParamSpec("x", "float", required=True),
                    ParamSpec("y", "float", required=True),
                    ParamSpec("z", "float", required=True),
                    ParamSpec("feed", "float", required=False,
                              default=DEFAULT_FEED_MM_S),
                ),
                description="Linear move to (x, y, z) mm at feed mm/s.",
            ),
            ActionSpec(
                device_id="gantry",
                action_name="home",
                params=(),
                description="Re-reference all axes to the origin.",
            ),
            ActionSpec(
                device_id="gantry",
                action_name="stop",
                params=(),
                description="Assert the gantry is stationary.",
            ),
        ]

    def handlers(self) -> dict[str, ActionHandler]:
        return {
            "move": ActionHandler(run=self._run_move,
                                  validate=self._validate_move),
            "home": ActionHandler(run=self._run_home),
            "stop": ActionHandler(run=self._run_stop),
        }
