"""Assembly of the standard instrument set on a runtime.

One seed fans out to independent per-device RNG streams, so adding or
re-seeding one simulator never shifts another's draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from labscan.clock import Clock
from labscan.devices import (
    CameraScene,
    CameraSim,
    GantrySim,
    Phantom,
    SpectrometerSim,
)
from labscan.runtime.core import DeviceDescriptor, DeviceRuntime


@dataclass
class SimBundle:
    gantry: GantrySim
    spectrometer: SpectrometerSim
    camera: CameraSim


def attach_standard_devices(runtime: DeviceRuntime, phantom: Phantom,
                            seed: int = 0, endpoint: str = "",
                            gantry_kwargs: dict | None = None) -> SimBundle:
    """Register gantry + spectrometer + camera sims on the runtime.

    ``gantry_kwargs`` forwards stage geometry/noise overrides (limits,
    resolution, repeatability) from the config file to the simulator.
    """
    seeds = np.random.SeedSequence(seed).spawn(2)
    gantry = GantrySim(runtime.clock, np.random.default_rng(seeds[0]),
                       **(gantry_kwargs or {}))
    spectrometer = SpectrometerSim(runtime.clock,
                                   np.random.default_rng(seeds[1]),
                                   phantom, position_source=gantry)
    camera = CameraSim(runtime.clock, CameraScene.overhead(phantom))
    for sim, device_id, name in (
        (gantry, "gantry", "3-axis gantry"),
        (spectrometer, "spectrometer", "LIBS spectrometer"),
        (camera, "camera", "RGB-D camera"),
    ):
        runtime.register_device(
            DeviceDescriptor(device_id, name, tuple(sim.action_specs()),
                             endpoint=endpoint),
            sim.handlers(), status_fn=sim.snapshot)
    return SimBundle(gantry, spectrometer, camera)
