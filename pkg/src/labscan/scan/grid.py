"""Raster grid planning.

A grid is a row-major lattice of measurement points over a rectangle:
origin + extent + pitch, both endpoints inclusive.  The count along an
axis is floor(extent/pitch)+1 with a small epsilon so that extents that
are exact multiples of the pitch (4.0/0.2 comes out as 19.999...96 in
binary floats) still land on the far edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

# absorbs float division error when extent is an exact multiple of pitch
_COUNT_EPS = 1e-9

# how many offending points to spell out in an out-of-range error
_MAX_LISTED = 8


class GridError(ValueError):
    """Grid planning failure; ``code`` is BAD_PARAMS or OUT_OF_RANGE."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class GridPoint(NamedTuple):
    """One lattice point.  ``index`` is the row-major position."""

    index: int
    ix: int
    iy: int
    x: float
    y: float


@dataclass(frozen=True)
class ScanGrid:
    origin: tuple[float, float]
    extent: tuple[float, float]
    pitch: float
    z: float
    safe_z: float
    nx: int
    ny: int
    points: tuple[GridPoint, ...]

    @property
    def shape(self) -> tuple[int, int]:
        # (rows, cols) to match image conventions
        return (self.ny, self.nx)

    def __len__(self) -> int:
        return len(self.points)

    def to_manifest(self) -> dict:
        """Grid parameters as a JSON-ready dict (used for resume checks)."""
        return {
            "origin": [self.origin[0], self.origin[1]],
            "extent": [self.extent[0], self.extent[1]],
            "pitch": self.pitch,
            "z": self.z,
            "safe_z": self.safe_z,
            "nx": self.nx,
            "ny": self.ny,
            "count": len(self.points),
        }


def _axis_count(extent: float, pitch: float) -> int:
    return int(math.floor(extent / pitch + _COUNT_EPS)) + 1


def plan_grid(origin, extent, pitch, *, z: float = 0.0, safe_z: float = 5.0,
              limits=None) -> ScanGrid:
    """Plan a row-major raster over ``origin``..``origin + extent``.

    ``limits`` is an optional (x_max, y_max, z_max) workspace bound; any
    point outside [0, limit] raises OUT_OF_RANGE naming the offenders so
    the caller can shrink the request instead of discovering the problem
    mid-scan.
    """
    x0, y0 = float(origin[0]), float(origin[1])
    w, h = float(extent[0]), float(extent[1])
    pitch = float(pitch)
    if not (pitch > 0.0) or not math.isfinite(pitch):
        raise GridError("BAD_PARAMS", f"pitch must be positive, got {pitch}")
    if w < 0.0 or h < 0.0:
        raise GridError("BAD_PARAMS", f"extent must be non-negative, "
                                      f"got ({w}, {h})")
    if not all(math.isfinite(v) for v in (x0, y0, w, h)):
        raise GridError("BAD_PARAMS", "origin and extent must be finite")
    z = float(z)
    safe_z = float(safe_z)
    if safe_z < z:
        raise GridError("BAD_PARAMS",
                        f"safe height {safe_z} below measurement height {z}")

    nx = _axis_count(w, pitch)
    ny = _axis_count(h, pitch)
    points = []
    index = 0
    for iy in range(ny):
        y = y0 + iy * pitch
        for ix in range(nx):
            points.append(GridPoint(index, ix, iy, x0 + ix * pitch, y))
            index += 1

    if limits is not None:
        x_max, y_max, z_max = (float(v) for v in limits)
        offenders = [pt for pt in points
                     if not (0.0 <= pt.x <= x_max and 0.0 <= pt.y <= y_max)]
        if not (0.0 <= z <= z_max and 0.0 <= safe_z <= z_max):
            raise GridError("OUT_OF_RANGE",
                            f"heights z={z}, safe_z={safe_z} outside "
                            f"[0, {z_max}]")
        if offenders:
            listed = ", ".join(f"#{pt.index}@({pt.x:g},{pt.y:g})"
                               for pt in offenders[:_MAX_LISTED])
            more = len(offenders) - _MAX_LISTED
            if more > 0:
                listed += f" and {more} more"
            raise GridError("OUT_OF_RANGE",
                            f"{len(offenders)} of {len(points)} points "
                            f"outside workspace [0,{x_max}]x[0,{y_max}]: "
                            f"{listed}")

    return ScanGrid(origin=(x0, y0), extent=(w, h), pitch=pitch, z=z,
                    safe_z=safe_z, nx=nx, ny=ny, points=tuple(points))
