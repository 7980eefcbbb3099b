"""Simulated RGB-D camera viewing the phantom plane.

Renders the phantom rectangle (world plane z = 0) through an ideal pinhole:
per pixel, the viewing ray is intersected with the plane; hits inside the
rectangle get the cell's region color and the camera-frame depth of the hit,
everything else gets a background color and the configured far depth.  RGB
and depth are pixel-aligned by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from labscan.devices.phantom import Phantom
from labscan.driver import ActionHandler, DriverContext, GoalRejected
from labscan.protocol import ActionSpec

IMAGE_WIDTH = 1920
IMAGE_HEIGHT = 1080

CAPTURE_TIME_S = 0.5

_BACKGROUND_RGB = (40, 40, 44)
# Region palette: index 0 is the phantom's default composition.
_REGION_RGB = (
    (186, 172, 148),
    (142, 188, 224),
    (206, 142, 118),
    (150, 204, 150),
    (204, 182, 120),
)


@dataclass
class CameraScene:
    """Intrinsics, extrinsics and scene content for the render."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # world -> camera, (3, 3)
    translation: np.ndarray   # (3,), P_c = R P_w + T
    phantom: Phantom
    far_depth_mm: float = 2000.0
    width: int = IMAGE_WIDTH
    height: int = IMAGE_HEIGHT

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def overhead(cls, phantom: Phantom, height_mm: float = 60.0,
                 fx: float = 1000.0, fy: float = 1000.0) -> "CameraScene":
        """Camera straight above the phantom center, looking down."""
        x0, y0, x1, y1 = phantom.bounds
        center = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1), height_mm])
        rotation = np.array([[1.0, 0.0, 0.0],
                             [0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0]])
        translation = -rotation @ center
        return cls(fx=fx, fy=fy, cx=IMAGE_WIDTH / 2.0, cy=IMAGE_HEIGHT / 2.0,
                   rotation=rotation, translation=translation, phantom=phantom)


class CameraSim:
    def __init__(self, clock, scene: CameraScene | None = None):
        self.clock = clock
        self.scene = scene
        self.captures = 0

    def configure(self, scene: CameraScene) -> None:
        self.scene = scene

    def snapshot(self) -> dict:
        return {"configured": self.scene is not None, "captures": self.captures}

    def render(self, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Return (rgb uint8 HxWx3, depth float64 HxW in mm).

        ``scale`` < 1 renders a proportionally smaller image with the same
        field of view, for cheap tests and previews.
        """
        if self.scene is None:
            raise RuntimeError("camera scene not configured")
        sc = self.scene
        width = max(1, int(round(sc.width * scale)))
        height = max(1, int(round(sc.height * scale)))
        fx, fy = sc.fx * scale, sc.fy * scale
        cx, cy = sc.cx * scale, sc.cy * scale

        u = np.arange(width, dtype=float)
        v = np.arange(height, dtype=float)
        uu, vv = np.meshgrid(u, v)
        # Camera-frame ray directions with z component 1, so the plane-hit
        # parameter equals the camera-frame depth directly.
        dx = (uu - cx) / fx
        dy = (vv - cy) / fy
        r_inv = sc.rotation.T
        d_wz = r_inv[2, 0] * dx + r_inv[2, 1] * dy + r_inv[2, 2]
        t_wz = float(r_inv[2] @ sc.translation)
        with np.errstate(divide="ignore", invalid="ignore"):
            z_c = t_wz / d_wz
        hit = np.isfinite(z_c) & (z_c > 0.0)

        x_w = (r_inv[0, 0] * (z_c * dx - sc.translation[0])
               + r_inv[0, 1] * (z_c * dy - sc.translation[1])
               + r_inv[0, 2] * (z_c - sc.translation[2]))
        y_w = (r_inv[1, 0] * (z_c * dx - sc.translation[0])
               + r_inv[1, 1] * (z_c * dy - sc.translation[1])
               + r_inv[1, 2] * (z_c - sc.translation[2]))
        x0, y0, x1, y1 = sc.phantom.bounds
        on_sample = hit & (x_w >= x0) & (x_w < x1) & (y_w >= y0) & (y_w < y1)

        depth = np.full((height, width), sc.far_depth_mm)
        depth[on_sample] = z_c[on_sample]
        rgb = np.empty((height, width, 3), dtype=np.uint8)
        rgb[:, :] = _BACKGROUND_RGB
        if np.any(on_sample):
            ph = sc.phantom
            ix = np.floor((x_w[on_sample] - ph.origin[0]) / ph.cell_size)
            iy = np.floor((y_w[on_sample] - ph.origin[1]) / ph.cell_size)
            ix = np.clip(ix.astype(int), 0, ph.nx - 1)
            iy = np.clip(iy.astype(int), 0, ph.ny - 1)
            comp_ids = ph.cell_comp[iy, ix]
            palette = np.array(
                [_REGION_RGB[i % len(_REGION_RGB)]
                 for i in range(len(ph.compositions))],
                dtype=np.uint8,
            )
            rgb[on_sample] = palette[comp_ids]
        return rgb, depth

    # -- driver -----------------------------------------------------------

    def _validate_capture(self, params: dict) -> None:
        if self.scene is None:
            raise GoalRejected("UNCONFIGURED", "camera scene not configured")

    def _run_capture(self, ctx: DriverContext):
        yield CAPTURE_TIME_S
        rgb, depth = self.render()
        self.captures += 1
        return {
            "width": rgb.shape[1],
            "height": rgb.shape[0],
            "rgb": rgb,
            "depth": depth,
            "timestamp_s": float(self.clock.now()),
        }

    def action_specs(self) -> list[ActionSpec]:
        return [
            ActionSpec(
                device_id="camera",
                action_name="capture",
                params=(),
                description="Capture one aligned RGB + depth frame.",
            ),
        ]

    def handlers(self) -> dict[str, ActionHandler]:
        return {
            "capture": ActionHandler(run=self._run_capture,
                                     validate=self._validate_capture),
        }
