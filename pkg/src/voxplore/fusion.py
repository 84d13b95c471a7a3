"""Incremental fusion of scene-completion predictions into the SC map layer.

The SC layer stores per-voxel log-odds evidence, accumulated with one of five
strategies. The occupancy strategy treats predictions as object detections:
occupied predictions always add non-negative evidence weighted by a per-class
calibration, free predictions subtract only a small constant amount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .grid import FREE, OCCUPIED, UNKNOWN, BlockHashGrid, GridConfig, Pose

# Class ids used by the procedural worlds and the oracle.
CLASS_FREE = 0
CLASS_FLOOR = 1
CLASS_WALL = 2
CLASS_FURNITURE = 3
CLASS_SOFA = 4

CLASS_NAMES = {CLASS_FREE: "free", CLASS_FLOOR: "floor", CLASS_WALL: "wall",
               CLASS_FURNITURE: "furniture", CLASS_SOFA: "sofa"}

# Probability clamp for the probabilistic strategy; a network confidence of
# exactly 1 would otherwise produce an infinite log-odds increment.
P_EPS = 1e-4


class FusionStrategy(Enum):
    OCCUPANCY = "occupancy"
    PROBABILISTIC = "probabilistic"
    COUNTING = "counting"
    SC_FUSION_BASELINE = "scfusion"
    NO_FUSION = "nofusion"


@dataclass
class ClassCalibration:
    """Empirical per-class occupancy confidence and the constant free weight."""

    occupied: dict = field(default_factory=lambda: {
        CLASS_FLOOR: 0.41,
        CLASS_WALL: 0.41,
        CLASS_FURNITURE: 0.30,
        CLASS_SOFA: 0.56,
    })
    p_free: float = 0.49

    def __post_init__(self):
        if not (0.0 < self.p_free < 0.5):
            raise ValueError("p_free must be in (0, 0.5)")
        for cid, p in self.occupied.items():
            if not (0.0 <= p < 1.0):
                raise ValueError(f"calibration for class {cid} out of [0, 1)")

    @property
    def free_weight(self) -> float:
        return math.log(self.p_free / (1.0 - self.p_free))

    def occupied_weight(self, class_id: int) -> float:
        if class_id not in self.occupied:
            raise KeyError(f"no calibration entry for class {class_id}")
        p = self.occupied[class_id]
        return math.log((1.0 + p) / (1.0 - p))


def occupancy_update_weight(predicted_occupied: bool, class_id: int,
                            calib: ClassCalibration) -> float:
    """Log-odds increment of the detection-style occupancy update."""
    if predicted_occupied:
        return calib.occupied_weight(class_id)
    return calib.free_weight


def probability(l) -> np.ndarray | float:
    """Probability of the log-odds value(s); exact inverse of log_odds."""
    l = np.asarray(l, dtype=np.float64)
    out = np.where(l >= 0, 1.0 / (1.0 + np.exp(-l)), np.exp(l) / (1.0 + np.exp(l)))
    return float(out) if out.ndim == 0 else out


def log_odds(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


@dataclass
class Prediction:
    """One scene-completed volume, grid-aligned with the global map.

    ``origin`` is the minimum voxel index of the volume; the state/class_id/
    confidence arrays share shape ``dims`` (default 60 x 60 x 36 voxels).
    """

    anchor: Pose
    origin: np.ndarray            # (3,) int64 voxel index of the volume corner
    state: np.ndarray             # uint8, FREE or OCCUPIED
    class_id: np.ndarray          # uint8
    confidence: np.ndarray        # float64 in [0, 1]
    timestamp: float = 0.0

    PRED_DIMS = (60, 60, 36)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.int64)
        if not (self.state.shape == self.class_id.shape == self.confidence.shape):
            raise ValueError("prediction field shapes differ")

    @property
    def dims(self):
        return self.state.shape

    def voxel_indices(self) -> np.ndarray:
        """Global indices of all voxels in the volume, shape (n, 3), C order."""
        nx, ny, nz = self.dims
        gi = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                  indexing="ij"), axis=-1).reshape(-1, 3)
        return gi + self.origin


class ScLayer:
    """The scene-completion map layer."""

    def __init__(self, cfg: GridConfig, bounds=None):
        self.cfg = cfg
        self.grid = BlockHashGrid(
            cfg,
            fields={
                "log_odds": (np.float64, 0.0),
                "hits": (np.uint32, 0),
                "total": (np.uint32, 0),
                "touched": (np.bool_, False),
            },
            bounds=bounds,
        )
        self.version = 0

    def log_odds_at(self, idx) -> np.ndarray:
        return self.grid.read("log_odds", idx)

    def touched_at(self, idx) -> np.ndarray:
        return self.grid.read("touched", idx)


def fuse_prediction(pred: Prediction, layer: ScLayer, strategy: FusionStrategy,
                    calib: ClassCalibration, measured_mask=None):
    """Fuse one prediction into the SC layer under the given strategy.

    ``measured_mask`` (bool array of pred.dims) marks voxels already measured by
    the sensor at fusion time; only the SCFusion baseline consults it. Raises on
    a prediction whose grid does not match the layer's.
    """
    if layer.cfg.voxel_size <= 0:
        raise ValueError("bad layer config")
    if pred.state.ndim != 3:
        raise ValueError("misaligned prediction: expected a 3D voxel volume")

    idx = pred.voxel_indices()
    state = pred.state.reshape(-1)
    cls = pred.class_id.reshape(-1)
    conf = pred.confidence.reshape(-1)
    occ = state == OCCUPIED

    if strategy is FusionStrategy.SC_FUSION_BASELINE:
        if measured_mask is None:
            measured_mask = np.zeros(idx.shape[0], dtype=bool)
        else:
            measured_mask = np.asarray(measured_mask, dtype=bool).reshape(-1)
        sel = occ & ~measured_mask
        idx, cls = idx[sel], cls[sel]
        if idx.shape[0]:
            inc = np.array([calib.occupied_weight(int(c)) for c in np.unique(cls)])
            lut = {int(c): w for c, w in zip(np.unique(cls), inc)}
            delta = np.array([lut[int(c)] for c in cls])
            _accumulate(layer, idx, delta)
    elif strategy is FusionStrategy.OCCUPANCY:
        delta = _occupancy_deltas(occ, cls, calib)
        _accumulate(layer, idx, delta)
    elif strategy is FusionStrategy.PROBABILISTIC:
        p_hat = np.where(occ, conf, 1.0 - conf)
        p_hat = np.clip(p_hat, P_EPS, 1.0 - P_EPS)
        _accumulate(layer, idx, np.log(p_hat / (1.0 - p_hat)))
    elif strategy is FusionStrategy.COUNTING:
        layer.grid.write("hits", idx, occ.astype(np.uint32), op="add")
        layer.grid.write("total", idx, np.ones(idx.shape[0], dtype=np.uint32), op="add")
        hits = layer.grid.read("hits", idx).astype(np.float64)
        total = layer.grid.read("total", idx).astype(np.float64)
        p = (hits + 0.5) / (total + 1.0)  # Laplace smoothing keeps log-odds finite
        layer.grid.write("log_odds", idx, np.log(p / (1.0 - p)), op="set")
        layer.grid.write("touched", idx, True, op="set")
    elif strategy is FusionStrategy.NO_FUSION:
        delta = _occupancy_deltas(occ, cls, calib)
        layer.grid.write("log_odds", idx, delta, op="set")
        layer.grid.write("touched", idx, True, op="set")
    else:
        raise ValueError(f"unknown strategy {strategy}")
    layer.version += 1


def _occupancy_deltas(occ, cls, calib):
    delta = np.full(occ.shape[0], calib.free_weight)
    if np.any(occ):
        for c in np.unique(cls[occ]):
            w = calib.occupied_weight(int(c))
            delta[occ & (cls == c)] = w
    return delta


def _accumulate(layer, idx, delta):
    layer.grid.write("log_odds", idx, delta, op="add")
    layer.grid.write("touched", idx, True, op="set")


# -- prediction stream log ---------------------------------------------------
#
# Line-based text format, one record per prediction:
#   REC t=<time> pose=<x> <y> <z> <yaw> origin=<i> <j> <k> dims=<nx> <ny> <nz>
#   V <n>:<state>:<class>:<conf> ...      run-length encoded voxel payload
#   M <n>:<0|1> ...                       run-length encoded measured mask
#   END
# Floats are written with repr so the round trip is lossless.


def write_prediction_log(path, records):
    """Write (Prediction, measured_mask) pairs; measured_mask may be None."""
    with open(path, "w") as f:
        for pred, mask in records:
            p = pred.anchor
            f.write(f"REC t={pred.timestamp!r} pose={p.x!r},{p.y!r},{p.z!r},{p.yaw!r} "
                    f"origin={pred.origin[0]},{pred.origin[1]},{pred.origin[2]} "
                    f"dims={pred.dims[0]},{pred.dims[1]},{pred.dims[2]}\n")
            payload = list(zip(pred.state.reshape(-1).tolist(),
                               pred.class_id.reshape(-1).tolist(),
                               pred.confidence.reshape(-1).tolist()))
            f.write("V " + " ".join(f"{n}:{s}:{c}:{v!r}" for n, (s, c, v) in _rle(payload)) + "\n")
            if mask is None:
                mask_vals = [0] * pred.state.size
            else:
                mask_vals = np.asarray(mask, dtype=np.uint8).reshape(-1).tolist()
            f.write("M " + " ".join(f"{n}:{v}" for n, v in _rle(mask_vals)) + "\n")
            f.write("END\n")


def read_prediction_log(path):
    """Read back a list of (Prediction, measured_mask) pairs."""
    out = []
    with open(path) as f:
        lines = f.read().splitlines()
    i = 0
    rec_idx = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        try:
            if not line.startswith("REC "):
                raise ValueError("expected REC header")
            vals = {}
            for tok in line[4:].split():
                key, _, v = tok.partition("=")
                vals[key] = v.split(",")
            t = float(vals["t"][0])
            px, py, pz, pyaw = (float(v) for v in vals["pose"])
            origin = np.array([int(v) for v in vals["origin"]], dtype=np.int64)
            dims = tuple(int(v) for v in vals["dims"])
            vline = lines[i + 1]
            mline = lines[i + 2]
            if not vline.startswith("V ") or not mline.startswith("M "):
                raise ValueError("bad record body")
            if lines[i + 3] != "END":
                raise ValueError("missing END")
            states, classes, confs = [], [], []
            for tok in vline[2:].split():
                n, s, c, v = tok.split(":")
                n = int(n)
                states.extend([int(s)] * n)
                classes.extend([int(c)] * n)
                confs.extend([float(v)] * n)
            mask = []
            for tok in mline[2:].split():
                n, v = tok.split(":")
                mask.extend([int(v)] * int(n))
            size = dims[0] * dims[1] * dims[2]
            if len(states) != size or len(mask) != size:
                raise ValueError("payload length mismatch")
            pred = Prediction(
                anchor=Pose(px, py, pz, pyaw),
                origin=origin,
                state=np.array(states, dtype=np.uint8).reshape(dims),
                class_id=np.array(classes, dtype=np.uint8).reshape(dims),
                confidence=np.array(confs, dtype=np.float64).reshape(dims),
                timestamp=t,
            )
            out.append((pred, np.array(mask, dtype=bool).reshape(dims)))
        except Exception as e:
            raise ValueError(f"corrupt prediction log at record {rec_idx}: {e}") from e
        i += 4
        rec_idx += 1
    return out


def _rle(values):
    runs = []
    prev = None
    count = 0
    for v in values:
        if v == prev:
            count += 1
        else:
            if count:
                runs.append((count, prev))
            prev, count = v, 1
    if count:
        runs.append((count, prev))
    return runs
