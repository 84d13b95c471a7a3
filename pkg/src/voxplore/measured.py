"""Sensor-measurement map layer: log-odds occupancy with free-space carving.

Each voxel holds a clamped log-odds value plus an observed flag; the ternary
state is unknown until observed, then occupied iff log-odds >= 0.
"""

from __future__ import annotations

import math

import numpy as np

from ._kernels import TOUCH_FREE, TOUCH_OCC, integrate_rays
from .grid import FREE, OCCUPIED, UNKNOWN, BlockHashGrid, GridConfig, Pose, traverse_rays
from .sensor import SensorModel

LAMBDA_OCC = math.log(0.7 / 0.3)
LAMBDA_FREE = math.log(0.3 / 0.7)
LOG_ODDS_CLAMP = 10.0


class MeasuredLayer:
    """The measured map layer, fed by simulated depth images."""

    def __init__(self, cfg: GridConfig, bounds=None,
                 lambda_occ: float = LAMBDA_OCC, lambda_free: float = LAMBDA_FREE,
                 clamp: float = LOG_ODDS_CLAMP):
        self.cfg = cfg
        self.lambda_occ = lambda_occ
        self.lambda_free = lambda_free
        self.clamp = clamp
        self.grid = BlockHashGrid(
            cfg,
            fields={"log_odds": (np.float64, 0.0), "observed": (np.bool_, False)},
            bounds=bounds,
        )
        self.version = 0

    # -- queries -------------------------------------------------------------

    def state(self, idx) -> np.ndarray:
        """Ternary state per index: UNKNOWN until observed, then sign of log-odds."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        observed = self.grid.read("observed", idx)
        lo = self.grid.read("log_odds", idx)
        out = np.full(idx.shape[0], UNKNOWN, dtype=np.uint8)
        out[observed & (lo >= 0)] = OCCUPIED
        out[observed & (lo < 0)] = FREE
        return out

    def state_one(self, idx) -> int:
        return int(self.state(np.asarray(idx).reshape(1, 3))[0])

    def state_volume(self):
        """Dense ternary state over the layer bounds (bounded layers only)."""
        lo = self.grid.dense("log_odds")
        observed = self.grid.dense("observed")
        out = np.full(lo.shape, UNKNOWN, dtype=np.uint8)
        out[observed & (lo >= 0)] = OCCUPIED
        out[observed & (lo < 0)] = FREE
        return out

    # -- integration ---------------------------------------------------------

    def integrate_depth(self, pose: Pose, depth: np.ndarray, sensor: SensorModel,
                        pitch: float = 0.0):
        """Fuse one rendered depth image taken at ``pose``.

        ``depth`` is an (h, w) array of per-ray hit distances (inf = no hit
        within range) on the sensor's angular grid. Voxels strictly before each
        hit get a free update, the hit voxel an occupied update; no-hit rays
        carve free space to max range. Each voxel receives at most one update
        per frame, with occupied taking precedence over free.
        """
        if self.grid.bounds is not None:
            lo, hi = self.grid.bounds
            p = pose.position / self.cfg.voxel_size
            if np.any(p < lo) or np.any(p >= hi):
                raise ValueError(f"pose {pose} outside world bounds")
        depth = np.asarray(depth, dtype=np.float64)
        if depth.size == 0:
            return
        h, w = depth.shape
        depth = depth.reshape(-1)
        dirs = sensor.ray_directions(pose.yaw, width=w, height=h, pitch=pitch)
        if self.grid.bounds is not None:
            self._integrate_fast(pose, depth, dirs, sensor)
            self.version += 1
            return
        hit = np.isfinite(depth)
        reach = np.where(hit, depth, sensor.max_range)

        voxels, valid = traverse_rays(pose.position, dirs, reach, self.cfg)
        nu = self.cfg.voxel_size
        # Nudge slightly past the entry boundary so the floor lands inside the
        # surface voxel even for rays hitting a face from the negative side.
        hit_d = depth[hit, None] + nu * 1e-6
        hit_vox = np.floor((pose.position + dirs[hit] * hit_d) / nu).astype(np.int64)

        # Free voxels: everything traversed, minus this frame's occupied voxels.
        flat_free = _unique_rows(voxels[valid])
        if hit_vox.size:
            flat_occ = _unique_rows(hit_vox)
            free = _setdiff_rows(flat_free, flat_occ)
        else:
            flat_occ = np.empty((0, 3), dtype=np.int64)
            free = flat_free

        if free.shape[0]:
            self._apply(free, self.lambda_free)
        if flat_occ.shape[0]:
            self._apply(flat_occ, self.lambda_occ)
        self.version += 1

    def _integrate_fast(self, pose: Pose, depth, dirs, sensor: SensorModel):
        """Kernel-backed integration writing straight into the dense arrays."""
        lo, hi = self.grid.bounds
        touch = np.zeros(tuple((hi - lo).tolist()), dtype=np.uint8)
        integrate_rays(pose.position, np.ascontiguousarray(dirs), depth,
                       float(sensor.max_range), float(self.cfg.voxel_size),
                       lo.astype(np.int64), touch)
        l = self.grid.dense("log_odds")
        observed = self.grid.dense("observed")
        for code, delta in ((TOUCH_FREE, self.lambda_free), (TOUCH_OCC, self.lambda_occ)):
            m = touch == code
            l[m] = np.clip(l[m] + delta, -self.clamp, self.clamp)
            observed[m] = True

    def mark_free_sphere(self, center, radius: float):
        """Force-mark a sphere as observed free space (mission bootstrap)."""
        nu = self.cfg.voxel_size
        r = int(math.ceil(radius / nu)) + 1
        c = np.floor(np.asarray(center, dtype=np.float64) / nu).astype(np.int64)
        rng = np.arange(-r, r + 1)
        off = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        centers = (c + off + 0.5) * nu
        keep = np.linalg.norm(centers - np.asarray(center), axis=1) <= radius
        idx = c + off[keep]
        self.grid.write("log_odds", idx, -self.clamp, op="set")
        self.grid.write("observed", idx, True, op="set")
        self.version += 1

    def _apply(self, idx, delta):
        lo = self.grid.read("log_odds", idx)
        self.grid.write("log_odds", idx, np.clip(lo + delta, -self.clamp, self.clamp), op="set")
        self.grid.write("observed", idx, True, op="set")


def _unique_rows(a):
    if a.shape[0] == 0:
        return a.reshape(0, 3)
    key = _pack(a)
    _, ix = np.unique(key, return_index=True)
    return a[np.sort(ix)]


def _setdiff_rows(a, b):
    mask = ~np.isin(_pack(a), _pack(b))
    return a[mask]


def _pack(a):
    off = np.int64(1 << 20)
    return ((a[:, 0] + off) << 42) | ((a[:, 1] + off) << 21) | (a[:, 2] + off)
