"""Simulated instruments: gantry, LIBS spectrometer, RGB-D camera."""
from labscan.devices.camera import CameraScene, CameraSim
from labscan.devices.gantry import GantrySim
from labscan.devices.linedb import EmissionLine, LineDb, LineDbError
from labscan.devices.phantom import Phantom, PhantomError
from labscan.devices.spectrometer import (
    Spectrum,
    SpectrometerParams,
    SpectrometerSim,
    synthesize_intensity,
    wavelength_grid,
)

__all__ = [
    "CameraScene",
    "CameraSim",
    "GantrySim",
    "EmissionLine",
    "LineDb",
    "LineDbError",
    "Phantom",
    "PhantomError",
    "Spectrum",
    "SpectrometerParams",
    "SpectrometerSim",
    "synthesize_intensity",
    "wavelength_grid",
]
