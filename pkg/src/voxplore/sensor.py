"""Depth camera model: field of view, range, and ray fan generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SensorModel:
    h_fov_deg: float = 90.0
    v_fov_deg: float = 73.7
    max_range: float = 5.0
    width: int = 120
    height: int = 90

    def ray_directions(self, yaw: float, width=None, height=None,
                       pitch: float = 0.0) -> np.ndarray:
        """Unit directions of the pixel rays at a given yaw, shape (width*height, 3).

        Rays are laid out row-major (rows = elevation top to bottom), with each
        pixel ray at the center of its angular bin. ``pitch`` tilts the whole
        fan up (positive) or down in elevation.
        """
        w = self.width if width is None else width
        h = self.height if height is None else height
        hf = math.radians(self.h_fov_deg)
        vf = math.radians(self.v_fov_deg)
        az = yaw + (-hf / 2 + (np.arange(w) + 0.5) * hf / w)
        el = pitch + vf / 2 - (np.arange(h) + 0.5) * vf / h
        azg, elg = np.meshgrid(az, el)
        ce = np.cos(elg)
        dirs = np.stack([ce * np.cos(azg), ce * np.sin(azg), np.sin(elg)], axis=-1)
        return dirs.reshape(-1, 3)
