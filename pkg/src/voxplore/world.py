"""Procedural ground-truth worlds: room layouts with labeled clutter, plus a
portable line-based world file format."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fusion import CLASS_FLOOR, CLASS_FURNITURE, CLASS_SOFA, CLASS_WALL
from .grid import GridConfig, Pose

SIX_CONN = ndimage.generate_binary_structure(3, 1)


class GroundTruthWorld:
    """Dense voxel occupancy with class labels, bounds, and a start pose."""

    def __init__(self, cfg: GridConfig, occupancy: np.ndarray, classes: np.ndarray,
                 start: Pose, lo=(0, 0, 0)):
        self.cfg = cfg
        self.occ = np.asarray(occupancy, dtype=bool)
        self.classes = np.asarray(classes, dtype=np.uint8)
        if self.occ.shape != self.classes.shape:
            raise ValueError("occupancy and class shapes differ")
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = self.lo + np.array(self.occ.shape, dtype=np.int64)
        self.start = start

    @property
    def shape(self):
        return self.occ.shape

    def contains(self, p) -> bool:
        idx = np.floor(np.asarray(p, dtype=np.float64) / self.cfg.voxel_size)
        return bool(np.all(idx >= self.lo) and np.all(idx < self.hi))

    def occupied_at(self, idx) -> np.ndarray:
        """Occupancy at voxel indices (N, 3); outside the bounds counts occupied."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64)) - self.lo
        shape = self.occ.shape
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.ones(idx.shape[0], dtype=bool)
        sel = idx[inside]
        out[inside] = self.occ[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def read_box(self, origin, dims):
        """(occupancy, classes) over an index box; out-of-world voxels read free."""
        occ = np.zeros(dims, dtype=bool)
        cls = np.zeros(dims, dtype=np.uint8)
        o = np.asarray(origin, dtype=np.int64) - self.lo
        src_lo = np.maximum(o, 0)
        src_hi = np.minimum(o + dims, self.occ.shape)
        if np.any(src_hi <= src_lo):
            return occ, cls
        dst_lo = src_lo - o
        dst_hi = src_hi - o
        s = tuple(slice(a, b) for a, b in zip(src_lo, src_hi))
        d = tuple(slice(a, b) for a, b in zip(dst_lo, dst_hi))
        occ[d] = self.occ[s]
        cls[d] = self.classes[s]
        return occ, cls

    def bounds_index(self):
        return self.lo, self.hi


@dataclass
class WorldSpec:
    """Procedural layout parameters (meters)."""

    size_x: float = 12.0
    size_y: float = 9.0
    size_z: float = 2.6
    rooms: int = 3
    clutter: int = 6
    voxel_size: float = 0.08
    door_width: float = 1.2
    clearance: float = 0.9    # guaranteed free margin around clutter (meters)

    def __post_init__(self):
        if min(self.size_x, self.size_y) < 2.0 or self.size_z < 1.2:
            raise ValueError("world footprint too small")
        if self.rooms < 1:
            raise ValueError("need at least one room")


def generate_world(spec: WorldSpec, seed: int) -> GroundTruthWorld:
    """Connected multi-room world: hollow shell, inner walls with doorways,
    box/cylinder clutter. The free space reachable from the start pose is a
    single connected component."""
    cfg = GridConfig(voxel_size=spec.voxel_size)
    rng = np.random.default_rng(seed)
    nu = spec.voxel_size
    nx = int(round(spec.size_x / nu))
    ny = int(round(spec.size_y / nu))
    nz = int(round(spec.size_z / nu))
    occ = np.zeros((nx, ny, nz), dtype=bool)
    cls = np.zeros((nx, ny, nz), dtype=np.uint8)

    def fill(sl, value, label):
        occ[sl] = value
        cls[sl] = label if value else 0

    # Shell: floor, ceiling, outer walls.
    fill(np.s_[:, :, 0], True, CLASS_FLOOR)
    fill(np.s_[:, :, nz - 1], True, CLASS_WALL)
    fill(np.s_[0, :, :], True, CLASS_WALL)
    fill(np.s_[nx - 1, :, :], True, CLASS_WALL)
    fill(np.s_[:, 0, :], True, CLASS_WALL)
    fill(np.s_[:, ny - 1, :], True, CLASS_WALL)

    # Inner walls: recursive splits of the floor plan.
    door_w = max(int(round(spec.door_width / nu)), 3)
    door_h = min(nz - 1, int(round(2.0 / nu)) + 1)
    regions = [(1, nx - 1, 1, ny - 1)]
    walls = []
    while len(regions) < spec.rooms:
        regions.sort(key=lambda r: (r[1] - r[0]) * (r[3] - r[2]), reverse=True)
        x0, x1, y0, y1 = regions.pop(0)
        min_side = door_w + 6
        if x1 - x0 < 2 * min_side and y1 - y0 < 2 * min_side:
            regions.append((x0, x1, y0, y1))
            break
        if x1 - x0 >= y1 - y0:
            cut = int(rng.integers(x0 + min_side, x1 - min_side))
            walls.append(("x", cut, y0, y1))
            regions.append((x0, cut, y0, y1))
            regions.append((cut + 1, x1, y0, y1))
        else:
            cut = int(rng.integers(y0 + min_side, y1 - min_side))
            walls.append(("y", cut, x0, x1))
            regions.append((x0, x1, y0, cut))
            regions.append((x0, x1, cut + 1, y1))
    # Build every wall first, then carve doors: a door position is only valid
    # if a robot-sized corridor through it is clear of the other walls (BSP
    # walls can otherwise dead-end right inside an earlier wall's doorway).
    for axis, cut, a0, a1 in walls:
        if axis == "x":
            fill(np.s_[cut, a0:a1, 1:nz - 1], True, CLASS_WALL)
        else:
            fill(np.s_[a0:a1, cut, 1:nz - 1], True, CLASS_WALL)
    cc = int(math.ceil(0.5 / nu))
    for axis, cut, a0, a1 in walls:
        candidates = rng.permutation(np.arange(a0 + 1, a1 - door_w - 1))
        door = int(candidates[0])
        for d in candidates:
            mid = int(d) + door_w // 2
            x0 = max(cut - cc, 1)
            if axis == "x":
                box = occ[x0:cut + cc + 1, mid - cc:mid + cc + 1, 1:door_h].copy()
                box[cut - x0] = False  # the wall plane itself gets carved
            else:
                box = occ[mid - cc:mid + cc + 1, x0:cut + cc + 1, 1:door_h].copy()
                box[:, cut - x0] = False
            if not np.any(box):
                door = int(d)
                break
        if axis == "x":
            fill(np.s_[cut, door:door + door_w, 1:door_h], False, 0)
        else:
            fill(np.s_[door:door + door_w, cut, 1:door_h], False, 0)

    # Start pose: center of the first region, mid height.
    x0, x1, y0, y1 = regions[0]
    start = Pose(((x0 + x1) / 2) * nu, ((y0 + y1) / 2) * nu,
                 min(1.2, spec.size_z / 2), 0.0)
    si = np.floor(start.position / nu).astype(int)

    # Clutter: boxes and cylinders, rejected if they break connectivity or
    # crowd the start pose.
    placed = 0
    attempts = 0
    while placed < spec.clutter and attempts < spec.clutter * 20:
        attempts += 1
        label = CLASS_SOFA if rng.random() < 0.4 else CLASS_FURNITURE
        w = int(rng.integers(4, 12))
        d = int(rng.integers(4, 12))
        h = int(rng.integers(4, min(14, nz - 3)))
        px = int(rng.integers(2, nx - w - 2))
        py = int(rng.integers(2, ny - d - 2))
        region = np.s_[px:px + w, py:py + d, 1:1 + h]
        # Keep a clearance margin around clutter so doorways and corridors stay
        # passable for a robot-sized sphere, not just voxel-connected.
        cc = int(math.ceil(spec.clearance / nu))
        guard = np.s_[max(px - cc, 1):min(px + w + cc, nx - 1),
                      max(py - cc, 1):min(py + d + cc, ny - 1), 1:1 + h]
        if np.any(occ[guard]):
            continue
        if np.linalg.norm([(px + w / 2) - si[0], (py + d / 2) - si[1]]) * nu < 1.2:
            continue
        save = occ[region].copy()
        if rng.random() < 0.3:
            # Cylinder footprint inside the box extent.
            r = min(w, d) / 2.0
            xs, ys = np.meshgrid(np.arange(w), np.arange(d), indexing="ij")
            disk = (xs - w / 2 + 0.5) ** 2 + (ys - d / 2 + 0.5) ** 2 <= r * r
            occ[region] |= disk[:, :, None]
            cls[region][disk[:, :, None] & ~save] = label
        else:
            fill(region, True, label)
        if not _connected(occ, si):
            occ[region] = save
            continue
        placed += 1

    if occ[si[0], si[1], si[2]] or not _connected(occ, si):
        raise ValueError("infeasible world spec: start pose not in connected free space")
    return GroundTruthWorld(cfg, occ, cls, start)


def _connected(occ, start_idx) -> bool:
    free = ~occ
    labels, _ = ndimage.label(free, structure=SIX_CONN)
    return bool(np.all(labels[free] == labels[start_idx[0], start_idx[1], start_idx[2]]))


# -- world file format -------------------------------------------------------
#
#   # voxplore-world v1
#   voxel_size <nu>
#   dims <nx> <ny> <nz>
#   lo <i> <j> <k>
#   start <x> <y> <z> <yaw>
#   rle <n>:<class_or_0> ...    (0 = free; class id implies occupied; C order)


def save_world(world: GroundTruthWorld, path):
    vals = np.where(world.occ, world.classes, 0).reshape(-1)
    runs = []
    changes = np.flatnonzero(np.r_[True, vals[1:] != vals[:-1]])
    ends = np.r_[changes[1:], len(vals)]
    for s, e in zip(changes, ends):
        runs.append(f"{e - s}:{int(vals[s])}")
    with open(path, "w") as f:
        f.write("# voxplore-world v1\n")
        f.write(f"voxel_size {world.cfg.voxel_size!r}\n")
        f.write(f"dims {world.shape[0]} {world.shape[1]} {world.shape[2]}\n")
        f.write(f"lo {world.lo[0]} {world.lo[1]} {world.lo[2]}\n")
        s = world.start
        f.write(f"start {s.x!r} {s.y!r} {s.z!r} {s.yaw!r}\n")
        f.write("rle " + " ".join(runs) + "\n")


def load_world(path) -> GroundTruthWorld:
    header = {}
    rle = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            if key == "rle":
                rle = rest.split()
            else:
                header[key] = rest.split()
    if rle is None or "dims" not in header:
        raise ValueError(f"not a world file: {path}")
    nu = float(header["voxel_size"][0])
    dims = tuple(int(v) for v in header["dims"])
    lo = tuple(int(v) for v in header.get("lo", ("0", "0", "0")))
    sx, sy, sz, syaw = (float(v) for v in header["start"])
    vals = np.empty(dims[0] * dims[1] * dims[2], dtype=np.uint8)
    pos = 0
    for tok in rle:
        n, v = tok.split(":")
        n = int(n)
        vals[pos:pos + n] = int(v)
        pos += n
    if pos != len(vals):
        raise ValueError("world rle length mismatch")
    vals = vals.reshape(dims)
    return GroundTruthWorld(GridConfig(voxel_size=nu), vals != 0, vals,
                            Pose(sx, sy, sz, syaw), lo=lo)
