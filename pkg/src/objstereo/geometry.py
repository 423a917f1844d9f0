"""Rectified pinhole stereo rig: projection between metric and (u, v, d) space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disparity import StereoGeometry


@dataclass(frozen=True)
class Camera:
    focal: float = 200.0
    baseline: float = 0.5
    height: int = 128
    width: int = 256
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        StereoGeometry(self.focal, self.baseline)
        if self.cx is None:
            object.__setattr__(self, "cx", (self.width - 1) / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", (self.height - 1) / 2.0)

    @property
    def geometry(self):
        return StereoGeometry(self.focal, self.baseline)

    @property
    def fb(self):
        return self.focal * self.baseline

    def project(self, xyz):
        """Camera-frame points (..., 3) to (..., 3) of (u, v, d) in the left image."""
        p = np.asarray(xyz, float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        if np.any(z <= 0):
            raise ValueError("cannot project points at or behind the camera")
        return np.stack([self.focal * x / z + self.cx, self.focal * y / z + self.cy, self.fb / z], axis=-1)

    def back_project(self, uvd):
        q = np.asarray(uvd, float)
        u, v, d = q[..., 0], q[..., 1], q[..., 2]
        z = self.fb / d
        return np.stack([(u - self.cx) * z / self.focal, (v - self.cy) * z / self.focal, z], axis=-1)

    def projection_rows(self):
        """KITTI-style 3x4 projection matrices for the left and right cameras."""
        k = np.array([[self.focal, 0, self.cx], [0, self.focal, self.cy], [0, 0, 1.0]])
        p2 = np.hstack([k, np.zeros((3, 1))])
        p3 = p2.copy()
        p3[0, 3] = -self.focal * self.baseline
        return p2, p3
