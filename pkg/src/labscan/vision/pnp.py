"""Camera pose from planar calibration correspondences.

The target is a plane at z_w = 0 (the sample table), so the pose follows
from the world-plane-to-image homography: normalized DLT gives H, K^-1 H
gives two rotation columns plus the translation, the nearest-rotation
projection restores orthonormality, and a damped least-squares pass on
reprojection error polishes the result.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from labscan.optim import least_squares_lm
from labscan.vision.geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
)

log = logging.getLogger(__name__)

MIN_POINTS = 4
# Collinearity gate: ratio of the two principal extents of the world points.
DEGENERATE_SPREAD_RATIO = 1e-9


class PoseError(ValueError):
    """Pose estimation failure with a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def load_correspondences(path) -> list[Correspondence]:
    """Read `x_w y_w z_w u v` rows; '#' starts a comment, blanks skipped."""
    corrs: list[Correspondence] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(
                f"line {lineno}: expected 5 columns (x_w y_w z_w u v), "
                f"got {len(parts)}")
        try:
            x_w, y_w, z_w, u, v = (float(p) for p in parts)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad number: {exc}") from exc
        corrs.append(Correspondence(world=(x_w, y_w, z_w), pixel=(u, v)))
    return corrs


def _similarity_normalization(points: np.ndarray) -> np.ndarray:
    """3x3 transform moving 2-D points to centroid 0, mean radius sqrt(2)."""
    centroid = points.mean(axis=0)
    radius = float(np.mean(np.linalg.norm(points - centroid, axis=1)))
    scale = np.sqrt(2.0) / radius if radius > 0.0 else 1.0
    return np.array([[scale, 0.0, -scale * centroid[0]],
                     [0.0, scale, -scale * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _homography_dlt(world_xy: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Plane-to-image homography by the normalized direct linear transform."""
    t_w = _similarity_normalization(world_xy)
    t_p = _similarity_normalization(pixels)
    ones = np.ones((world_xy.shape[0], 1))
    wn = (t_w @ np.hstack([world_xy, ones]).T).T
    pn = (t_p @ np.hstack([pixels, ones]).T).T

    rows = []
    for (x, y, _), (u, v, _) in zip(wn, pn):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    a = np.asarray(rows)
    _, s, vt = np.linalg.svd(a)
    # a clear null space separates a valid homography from a degenerate set
    if s[-2] <= 1e-12 * s[0]:
        raise PoseError("DEGENERATE",
                        "correspondences do not determine a homography")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_p) @ h_norm @ t_w
    return h / h[2, 2]


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _rotation_exp(delta: np.ndarray) -> np.ndarray:
    """Rotation matrix for a small axis-angle vector."""
    theta = float(np.linalg.norm(delta))
    if theta < 1e-12:
        return np.eye(3) + _skew(delta)
    k = _skew(delta / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _reprojection_rms(world: np.ndarray, pixels: np.ndarray,
                      k_mat: np.ndarray, r: np.ndarray,
                      t: np.ndarray) -> float:
    cam = world @ r.T + t
    uv = (cam[:, :2] * np.array([k_mat[0, 0], k_mat[1, 1]])
          / cam[:, 2:3] + np.array([k_mat[0, 2], k_mat[1, 2]]))
    return float(np.sqrt(np.mean((uv - pixels) ** 2)))


def estimate_extrinsics(corrs: Sequence[Correspondence],
                        intrinsics: CameraIntrinsics) -> CameraExtrinsics:
    """Recover the world-to-camera pose from a planar target.

    Needs >= 4 correspondences with all world points on z_w = 0 and not all
    collinear.  The returned pose carries the reprojection RMS in pixels.
    """
    if len(corrs) < MIN_POINTS:
        raise PoseError(
            "INSUFFICIENT_POINTS",
            f"need at least {MIN_POINTS} correspondences, got {len(corrs)}")
    world = np.array([c.world for c in corrs], dtype=float)
    pixels = np.array([c.pixel for c in corrs], dtype=float)
    if np.max(np.abs(world[:, 2])) > 1e-9:
        raise ValueError("calibration target must lie on the z_w = 0 plane")

    centered = world[:, :2] - world[:, :2].mean(axis=0)
    spread = np.linalg.svd(centered, compute_uv=False)
    if spread[1] <= DEGENERATE_SPREAD_RATIO * max(spread[0], 1.0):
        raise PoseError("DEGENERATE", "world points are collinear")

    h = _homography_dlt(world[:, :2], pixels)
    m = np.linalg.inv(intrinsics.matrix()) @ h
    scale = 2.0 / (np.linalg.norm(m[:, 0]) + np.linalg.norm(m[:, 1]))
    r1, r2, t = scale * m[:, 0], scale * m[:, 1], scale * m[:, 2]
    # the homography is sign-ambiguous; the target must sit in front, so the
    # camera-frame depth of the data centroid picks the branch
    cx_w, cy_w = world[:, :2].mean(axis=0)
    if r1[2] * cx_w + r2[2] * cy_w + t[2] < 0.0:
        r1, r2, t = -r1, -r2, -t
    r0 = _nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))

    k_mat = intrinsics.matrix()

    def residuals(theta: np.ndarray) -> np.ndarray:
        r = _rotation_exp(theta[:3]) @ r0
        cam = world @ r.T + theta[3:]
        z = cam[:, 2:3]
        if np.any(z <= 0.0):
            return np.full(2 * len(corrs), 1e6)
        uv = (cam[:, :2] * np.array([k_mat[0, 0], k_mat[1, 1]]) / z
              + np.array([k_mat[0, 2], k_mat[1, 2]]))
        return (uv - pixels).ravel()

    theta0 = np.concatenate([np.zeros(3), t])
    res = least_squares_lm(residuals, theta0, max_iter=100)
    if not np.all(np.isfinite(res.x)):
        raise PoseError("NO_CONVERGENCE", "pose refinement diverged")
    r = _nearest_rotation(_rotation_exp(res.x[:3]) @ r0)
    t = res.x[3:]
    rms = _reprojection_rms(world, pixels, k_mat, r, t)
    log.debug("pose refined in %d iterations, rms %.3g px", res.iterations,
              rms)
    return CameraExtrinsics(rotation=r, translation=t, rms_px=rms)
