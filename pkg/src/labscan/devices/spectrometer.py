"""Simulated LIBS spectrometer.

Each fire ablates the phantom cell under the gantry head and returns a
synthetic emission spectrum: pseudo-Voigt lines from the bundled database
with amplitudes proportional to concentration x relative intensity, on a
smooth continuum, with shot-noise-like per-channel noise (sigma proportional
to sqrt of the local intensity).  22800 channels over 190-950 nm.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from labscan.devices.linedb import LineDb
from labscan.devices.phantom import Phantom
from labscan.driver import ActionHandler, DriverContext, GoalRejected
from labscan.protocol import ActionSpec, ParamSpec
from labscan.reduction.profiles import pseudo_voigt, pseudo_voigt_fwhm

N_CHANNELS = 22800
WAVELENGTH_MIN_NM = 190.0
WAVELENGTH_MAX_NM = 950.0
LASER_WAVELENGTH_NM = 1064.0
PULSE_ENERGY_MJ = 5.0

FEEDBACK_PERIOD_S = 0.5

_GRID: np.ndarray | None = None


def wavelength_grid() -> np.ndarray:
    """The shared 22800-channel wavelength axis, nm, strictly increasing."""
    global _GRID
    if _GRID is None:
        grid = np.linspace(WAVELENGTH_MIN_NM, WAVELENGTH_MAX_NM, N_CHANNELS)
        grid.flags.writeable = False
        _GRID = grid
    return _GRID


@dataclass
class SpectrometerParams:
    peak_scale: float = 4000.0        # counts per (fraction x rel_intensity)
    continuum_base: float = 40.0
    continuum_bump: float = 30.0
    continuum_center_nm: float = 500.0
    continuum_width_nm: float = 180.0
    line_width_g_nm: float = 0.12     # component FWHMs shared by all lines
    line_width_l_nm: float = 0.05
    noise_scale: float = 1.0
    noise_floor: float = 10.0
    shot_period_s: float = 13.5       # integration + flush per shot

    @property
    def line_fwhm_nm(self) -> float:
        return pseudo_voigt_fwhm(self.line_width_g_nm, self.line_width_l_nm)


@dataclass
class Spectrum:
    intensity: np.ndarray
    metadata: dict

    @property
    def wavelength_nm(self) -> np.ndarray:
        return wavelength_grid()

    def to_payload(self) -> dict:
        return {
            "intensities": [float(v) for v in self.intensity],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Spectrum":
        intensity = np.asarray(payload["intensities"], dtype=float)
        if intensity.size != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} channels, got {intensity.size}")
        return cls(intensity=intensity, metadata=dict(payload["metadata"]))


def synthesize_intensity(
    composition: dict[str, float] | None,
    db: LineDb,
    rng: np.random.Generator,
    params: SpectrometerParams = SpectrometerParams(),
) -> np.ndarray:
    """Forward model for one shot; ``composition=None`` means off-sample.

    Linear in concentration before noise.  The RNG is consumed once per call
    with a fixed draw count, so sequences of shots replay exactly.
    """
    x = wavelength_grid()
    u = (x - params.continuum_center_nm) / params.continuum_width_nm
    intensity = params.continuum_base + params.continuum_bump * np.exp(-u * u)
    if composition:
        span = 4.0 * max(params.line_fwhm_nm, 0.05)
        for element, fraction in composition.items():
            for line in db.lines_for(element):
                amp = params.peak_scale * fraction * line.rel_intensity
                if amp <= 0.0:
                    continue
                lo = int(np.searchsorted(x, line.wavelength_nm - span))
                hi = int(np.searchsorted(x, line.wavelength_nm + span))
                if lo >= hi:
                    continue  # line outside the spectral range
                intensity[lo:hi] += pseudo_voigt(
                    x[lo:hi], line.wavelength_nm, amp,
                    params.line_width_g_nm, params.line_width_l_nm,
                )
    if params.noise_scale > 0.0:
        sigma = params.noise_scale * np.sqrt(
            np.maximum(intensity, params.noise_floor)
        )
        intensity = intensity + sigma * rng.standard_normal(x.size)
    return np.clip(intensity, 0.0, None)


class PositionSource(Protocol):
    """Where the spectrometer learns the gantry pose; a direct reference to
    the simulator in-process, a stream-layer status client when distributed."""

    def snapshot(self) -> dict: ...


class SpectrometerSim:
    def __init__(
        self,
        clock,
        rng: np.random.Generator,
        phantom: Phantom,
        db: LineDb | None = None,
        position_source: PositionSource | None = None,
        params: SpectrometerParams | None = None,
    ):
        self.clock = clock
        self.rng = rng
        self.phantom = phantom
        self.db = db or LineDb.bundled()
        self.position_source = position_source
        self.params = params or SpectrometerParams()
        self.shots_fired = 0

    def snapshot(self) -> dict:
        return {"shots_fired": self.shots_fired,
                "channels": N_CHANNELS}

    def _gantry(self) -> dict:
        if self.position_source is None:
            raise GoalRejected("UNCONFIGURED", "no gantry position source")
        return self.position_source.snapshot()

    def _validate_fire(self, params: dict) -> None:
        if params["n_shots"] < 1:
            raise GoalRejected("BAD_PARAMS", "n_shots must be >= 1")
        if self._gantry()["moving"]:
            raise GoalRejected("BUSY", "gantry is moving")

    def _run_fire(self, ctx: DriverContext, n_shots: int):
        position = [float(v) for v in self._gantry()["position"]]
        duration = n_shots * self.params.shot_period_s
        t = 0.0
        while t < duration:
            if ctx.cancel_requested:
                return {"fired": False, "position": position}
            dt = min(FEEDBACK_PERIOD_S, duration - t)
            yield dt
            t += dt
            ctx.feedback(progress=round(t / duration, 6))
        x_mm, y_mm = position[0], position[1]
        composition = self.phantom.composition_at(x_mm, y_mm)
        intensity = synthesize_intensity(composition, self.db, self.rng,
                                         self.params)
        self.shots_fired += n_shots
        spectrum = Spectrum(
            intensity=intensity,
            metadata={
                "position": position,
                "timestamp_s": float(self.clock.now()),
                "inside_sample": composition is not None,
                "n_shots": n_shots,
                "laser_nm": LASER_WAVELENGTH_NM,
                "pulse_mj": PULSE_ENERGY_MJ,
            },
        )
        return {"fired": True, "spectrum": spectrum}

    def action_specs(self) -> list[ActionSpec]:
        return [
            ActionSpec(
                device_id="spectrometer",
                action_name="fire",
                params=(ParamSpec("n_shots", "int", required=False, default=1),),
                description="Fire the laser and collect one spectrum.",
            ),
        ]

    def handlers(self) -> dict[str, ActionHandler]:
        return {
            "fire": ActionHandler(run=self._run_fire,
                                  validate=self._validate_fire),
        }
