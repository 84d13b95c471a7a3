"""Sparse voxel grid substrate: index conversion, block-hashed storage, ray traversal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Ternary voxel states shared by all layers.
UNKNOWN = 0
FREE = 1
OCCUPIED = 2


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class GridConfig:
    voxel_size: float = 0.08
    block_side: int = 16

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.block_side < 1 or (self.block_side & (self.block_side - 1)) != 0:
            raise ValueError("block_side must be a power of two >= 1")


@dataclass
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self):
        self.x, self.y, self.z = float(self.x), float(self.y), float(self.z)
        self.yaw = float(normalize_angle(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def world_to_index(p, cfg: GridConfig) -> np.ndarray:
    """Map world points to voxel indices (floor semantics). Accepts (3,) or (N, 3)."""
    return np.floor(np.asarray(p, dtype=np.float64) / cfg.voxel_size).astype(np.int64)


def index_to_center(idx, cfg: GridConfig) -> np.ndarray:
    """Voxel center of the given indices; inverse of world_to_index up to half a voxel."""
    return (np.asarray(idx, dtype=np.float64) + 0.5) * cfg.voxel_size


class BlockHashGrid:
    """Block-allocated voxel grid holding one or more named per-voxel fields.

    Reads of unallocated voxels return each field's default ("unknown") value.
    When ``bounds`` (inclusive low index, exclusive high index) is given, storage
    is a single dense region covering the bounds, which is much faster for
    bounded worlds; writes outside the bounds are dropped, reads return the
    defaults. Without bounds, blocks of ``block_side**3`` voxels are allocated
    on first write.
    """

    def __init__(self, cfg: GridConfig, fields: dict, bounds=None):
        self.cfg = cfg
        self.fields = {name: (np.dtype(dt), default) for name, (dt, default) in fields.items()}
        self.bounds = None
        self._blocks = {}
        self._dense = None
        if bounds is not None:
            lo = np.asarray(bounds[0], dtype=np.int64)
            hi = np.asarray(bounds[1], dtype=np.int64)
            if np.any(hi <= lo):
                raise ValueError("empty bounds")
            self.bounds = (lo, hi)
            shape = tuple((hi - lo).tolist())
            self._dense = {
                name: np.full(shape, default, dtype=dt) for name, (dt, default) in self.fields.items()
            }

    # -- index helpers -------------------------------------------------------

    def _split(self, idx):
        b = self.cfg.block_side
        block = idx >> int(math.log2(b)) if b > 1 else idx.copy()
        local = idx - block * b
        return block, local

    def _dense_local(self, idx):
        lo, hi = self.bounds
        local = idx - lo
        ok = np.all((idx >= lo) & (idx < hi), axis=-1)
        return local, ok

    # -- vectorized access ---------------------------------------------------

    def read(self, name: str, idx) -> np.ndarray:
        """Read field ``name`` at indices ``idx`` of shape (N, 3) or (3,)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        dt, default = self.fields[name]
        out = np.full(idx.shape[0], default, dtype=dt)
        if self._dense is not None:
            local, ok = self._dense_local(idx)
            sel = local[ok]
            out[ok] = self._dense[name][sel[:, 0], sel[:, 1], sel[:, 2]]
            return out
        block, local = self._split(idx)
        keys = self._pack(block)
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        ends = np.r_[starts[1:], len(sk)]
        for s, e in zip(starts, ends):
            key = sk[s]
            blk = self._blocks.get(key)
            if blk is None:
                continue
            rows = order[s:e]
            loc = local[rows]
            out[rows] = blk[name][loc[:, 0], loc[:, 1], loc[:, 2]]
        return out

    def write(self, name: str, idx, values, op: str = "set"):
        """Set or add values at indices, allocating blocks as needed.

        ``op`` is "set", "add", or "or". Duplicate indices with "add" accumulate.
        """
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values), (idx.shape[0],))
        if self._dense is not None:
            local, ok = self._dense_local(idx)
            sel = local[ok]
            vals = values[ok]
            arr = self._dense[name]
            flat = (sel[:, 0] * arr.shape[1] + sel[:, 1]) * arr.shape[2] + sel[:, 2]
            if op == "set":
                arr.reshape(-1)[flat] = vals
            elif op == "add":
                np.add.at(arr.reshape(-1), flat, vals)
            elif op == "or":
                arr.reshape(-1)[flat] |= vals
            else:
                raise ValueError(f"unknown op {op!r}")
            return
        block, local = self._split(idx)
        keys = self._pack(block)
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        ends = np.r_[starts[1:], len(sk)]
        b = self.cfg.block_side
        for s, e in zip(starts, ends):
            key = sk[s]
            blk = self._blocks.get(key)
            if blk is None:
                blk = {
                    n: np.full((b, b, b), default, dtype=dt)
                    for n, (dt, default) in self.fields.items()
                }
                self._blocks[key] = blk
            rows = order[s:e]
            loc = local[rows]
            vals = values[rows]
            arr = blk[name]
            flat = (loc[:, 0] * b + loc[:, 1]) * b + loc[:, 2]
            if op == "set":
                arr.reshape(-1)[flat] = vals
            elif op == "add":
                np.add.at(arr.reshape(-1), flat, vals)
            elif op == "or":
                arr.reshape(-1)[flat] |= vals
            else:
                raise ValueError(f"unknown op {op!r}")

    def dense(self, name: str) -> np.ndarray:
        """Direct view of the dense backing array (bounded grids only)."""
        if self._dense is None:
            raise ValueError("grid has no dense backing; construct with bounds")
        return self._dense[name]

    @property
    def n_allocated_blocks(self) -> int:
        return len(self._blocks)

    @staticmethod
    def _pack(block):
        # 21 bits per axis, offset to stay non-negative.
        off = np.int64(1 << 20)
        return ((block[:, 0] + off) << 42) | ((block[:, 1] + off) << 21) | (block[:, 2] + off)


# -- ray traversal -----------------------------------------------------------


def traverse_ray(origin, direction, max_len: float, cfg: GridConfig):
    """Exact ordered sequence of voxels pierced by a segment (Amanatides-Woo stepping).

    Ties at axis crossings are broken in fixed order x -> y -> z, so a ray through
    an exact voxel corner visits both adjacent cells deterministically.
    """
    d = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError("zero-length direction")
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    d = d / n
    o = np.asarray(origin, dtype=np.float64)
    nu = cfg.voxel_size

    cur = np.floor(o / nu).astype(np.int64)
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.where(d != 0, nu / np.abs(d), np.inf)
        next_boundary = (cur + (step > 0)) * nu
        t_max = np.where(d != 0, (next_boundary - o) / d, np.inf)

    out = [tuple(cur)]
    t_max = t_max.copy()
    while True:
        axis = int(np.argmin(t_max))  # argmin takes the lowest axis on ties
        t = t_max[axis]
        if t >= max_len:
            break
        cur = cur.copy()
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        out.append(tuple(cur))
    return [np.array(v, dtype=np.int64) for v in out]


def traverse_rays(origins, dirs, max_len, cfg: GridConfig, blocked_fn=None):
    """Lockstep Amanatides-Woo traversal of many rays at once.

    origins: (N, 3) or (3,); dirs: (N, 3) unit vectors; max_len: scalar or (N,).

    If ``blocked_fn(idx)`` is given (idx of shape (M, 3) -> bool mask), a ray
    stops after entering its first blocked voxel; the blocked voxel itself is
    still reported.

    Returns (voxels, valid): voxels of shape (N, S, 3) int64 and a bool mask of
    shape (N, S) marking which entries belong to each ray's traversal.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n_rays = dirs.shape[0]
    origins = np.broadcast_to(
        np.atleast_2d(np.asarray(origins, dtype=np.float64)), (n_rays, 3)
    )
    max_len = np.broadcast_to(np.asarray(max_len, dtype=np.float64), (n_rays,))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-length direction")
    dirs = dirs / norms[:, None]
    nu = cfg.voxel_size

    cur = np.floor(origins / nu).astype(np.int64)
    step = np.sign(dirs).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(dirs != 0, nu / np.abs(dirs), np.inf)
        next_boundary = (cur + (step > 0)) * nu
        t_max = np.where(dirs != 0, (next_boundary - origins) / dirs, np.inf)

    # Upper bound on the number of voxels any ray can touch.
    s_cap = int(np.ceil(np.max(max_len) * np.sum(np.abs(dirs), axis=1).max() / nu)) + 2
    voxels = np.zeros((n_rays, s_cap, 3), dtype=np.int64)
    valid = np.zeros((n_rays, s_cap), dtype=bool)

    voxels[:, 0] = cur
    valid[:, 0] = True
    active = np.ones(n_rays, dtype=bool)
    if blocked_fn is not None:
        active &= ~blocked_fn(cur)

    col = 0
    while np.any(active) and col + 1 < s_cap:
        col += 1
        ai = np.flatnonzero(active)
        tm = t_max[ai]
        axis = np.argmin(tm, axis=1)  # lowest axis wins ties: x -> y -> z
        t = tm[np.arange(len(ai)), axis]
        alive = t < max_len[ai]
        ai = ai[alive]
        if len(ai) == 0:
            break
        axis = axis[alive]
        cur[ai, axis] += step[ai, axis]
        t_max[ai, axis] += t_delta[ai, axis]
        voxels[ai, col] = cur[ai]
        valid[ai, col] = True
        active[:] = False
        active[ai] = True
        if blocked_fn is not None:
            hit = blocked_fn(cur[ai])
            active[ai[hit]] = False
    return voxels[:, : col + 1], valid[:, : col + 1]
