"""Pinhole camera math: pixel/world transforms and planar pose estimation."""
from labscan.vision.geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
    back_project,
    camera_to_world,
    project,
    world_to_camera,
)
from labscan.vision.pnp import PoseError, estimate_extrinsics, load_correspondences

__all__ = [
    "CameraExtrinsics",
    "CameraIntrinsics",
    "Correspondence",
    "back_project",
    "camera_to_world",
    "project",
    "world_to_camera",
    "PoseError",
    "estimate_extrinsics",
    "load_correspondences",
]
