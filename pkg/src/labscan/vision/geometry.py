"""Pinhole camera types and frame transforms.

Conventions match the simulated camera: ``rotation`` maps world to camera
(P_c = R P_w + T), depths are camera-frame z in mm.  The world frame is the
gantry frame; they share origin and axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Tolerance on R^T R = I and det(R) = 1 for a usable rotation.
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        for v in (self.fx, self.fy, self.cx, self.cy):
            if not math.isfinite(v):
                raise ValueError("intrinsics must be finite")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def _require_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
        raise ValueError("rotation determinant is not +1")
    return r


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera pose: P_c = rotation @ P_w + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray
    rms_px: float | None = None   # reprojection RMS when estimated from data

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           _require_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    def camera_position(self) -> np.ndarray:
        """Camera center expressed in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Correspondence:
    """A world point (mm) and the pixel it was observed at."""

    world: tuple[float, float, float]
    pixel: tuple[float, float]

    def __post_init__(self):
        vals = (*self.world, *self.pixel)
        if len(self.world) != 3 or len(self.pixel) != 2:
            raise ValueError("correspondence needs 3 world + 2 pixel coords")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("correspondence coordinates must be finite")


def back_project(u: float, v: float, z_c: float,
                 intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixel + camera-frame depth -> camera-frame point (x_c, y_c, z_c)."""
    if z_c < 0.0:
        raise ValueError("depth must be non-negative")
    if z_c == 0.0:
        # degenerate by convention: zero depth collapses to the origin
        return np.zeros(3)
    return np.array([
        (u - intrinsics.cx) * z_c / intrinsics.fx,
        (v - intrinsics.cy) * z_c / intrinsics.fy,
        z_c,
    ])


def world_to_camera(point_w, extrinsics: CameraExtrinsics) -> np.ndarray:
    r = _require_rotation(extrinsics.rotation)
    p = np.asarray(point_w, dtype=float).reshape(3)
    return r @ p + extrinsics.translation


def camera_to_world(point_c, extrinsics: CameraExtrinsics) -> np.ndarray:
    # R^-1 = R^T once orthonormality is checked
    r = _require_rotation(extrinsics.rotation)
    p = np.asarray(point_c, dtype=float).reshape(3)
    return r.T @ (p - extrinsics.translation)


def project(point_w, intrinsics: CameraIntrinsics,
            extrinsics: CameraExtrinsics) -> tuple[float, float]:
    """World point -> pixel; the point must be in front of the camera."""
    x_c, y_c, z_c = world_to_camera(point_w, extrinsics)
    if z_c <= 0.0:
        raise ValueError(f"point behind camera (z_c = {z_c:g})")
    return (intrinsics.fx * x_c / z_c + intrinsics.cx,
            intrinsics.fy * y_c / z_c + intrinsics.cy)
