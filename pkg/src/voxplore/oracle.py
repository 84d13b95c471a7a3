"""Ground-truth-backed stand-in for a scene-completion network.

Produces grid-aligned prediction volumes in front of the camera, optionally
corrupted by a seeded noise model (misses, hallucinations, optional spatial
correlation)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fusion import CLASS_FREE, CLASS_FURNITURE, Prediction
from .grid import FREE, OCCUPIED, GridConfig, Pose


@dataclass
class NoiseModel:
    """Per-prediction corruption: GT-occupied emitted free with ``miss_rate``,
    GT-free emitted occupied with ``hallucination_rate``."""

    miss_rate: float = 0.0
    hallucination_rate: float = 0.0
    class_miss_rates: dict = field(default_factory=dict)
    correlated: bool = False
    seed: int = 0

    def __post_init__(self):
        for r in (self.miss_rate, self.hallucination_rate, *self.class_miss_rates.values()):
            if not 0.0 <= r <= 1.0:
                raise ValueError("noise rates must lie in [0, 1]")


@dataclass
class OracleMode:
    noisy: NoiseModel | None = None

    @classmethod
    def perfect(cls):
        return cls(noisy=None)

    @classmethod
    def with_noise(cls, model: NoiseModel):
        return cls(noisy=model)


def prediction_box(pose: Pose, cfg: GridConfig, floor_k: int = 0,
                   dims=Prediction.PRED_DIMS):
    """Voxel origin of the prediction volume anchored at ``pose``.

    The camera yaw is quantized to the nearest 90 degrees; the box extends
    ``dims`` voxels forward from the camera voxel, laterally centered, with its
    bottom at floor height, keeping the volume grid aligned.
    """
    nx, ny, nz = dims
    quad = int(round(pose.yaw / (math.pi / 2.0))) % 4
    c = np.floor(pose.position / cfg.voxel_size).astype(np.int64)
    if quad == 0:       # +x
        origin = (c[0], c[1] - ny // 2, floor_k)
    elif quad == 1:     # +y
        origin = (c[0] - nx // 2, c[1], floor_k)
    elif quad == 2:     # -x
        origin = (c[0] - nx + 1, c[1] - ny // 2, floor_k)
    else:               # -y
        origin = (c[0] - nx // 2, c[1] - ny + 1, floor_k)
    return np.array(origin, dtype=np.int64), quad


def predict(pose: Pose, world, mode: OracleMode, timestamp: float = 0.0) -> Prediction:
    """One scene-completed volume at ``pose`` against the ground-truth world.

    The whole box is completed, including occluded regions; perfect mode copies
    ground truth with confidence 1. Deterministic in (pose, world, noise seed).
    """
    if not world.contains(pose.position):
        raise ValueError(f"pose {pose} outside world")
    dims = Prediction.PRED_DIMS
    origin, _ = prediction_box(pose, world.cfg, floor_k=int(world.lo[2]), dims=dims)

    occ, cls = world.read_box(origin, dims)  # out-of-world voxels read as free
    state = np.where(occ, OCCUPIED, FREE).astype(np.uint8)
    class_id = np.where(occ, cls, CLASS_FREE).astype(np.uint8)
    conf = np.ones(dims, dtype=np.float64)

    noise = mode.noisy
    if noise is not None:
        rng = np.random.default_rng(
            np.random.SeedSequence([noise.seed & 0x7FFFFFFF, int(origin[0]) & 0xFFFF,
                                    int(origin[1]) & 0xFFFF, int(origin[2]) & 0xFFFF]))
        miss = np.full(dims, noise.miss_rate)
        for cid, rate in noise.class_miss_rates.items():
            miss[cls == cid] = rate
        u = rng.random(dims)
        flip_miss = occ & (u < miss)
        flip_hall = ~occ & (u < noise.hallucination_rate)
        if noise.correlated:
            # Spatially correlated error patches rather than voxel salt.
            flip_miss = ndimage.binary_dilation(flip_miss) & occ
            flip_hall = ndimage.binary_dilation(flip_hall) & ~occ
        state[flip_miss] = FREE
        class_id[flip_miss] = CLASS_FREE
        state[flip_hall] = OCCUPIED
        class_id[flip_hall] = CLASS_FURNITURE
        conf = np.where(state == OCCUPIED, 1.0 - noise.hallucination_rate, 1.0 - miss)

    return Prediction(anchor=Pose(pose.x, pose.y, pose.z, pose.yaw), origin=origin,
                      state=state, class_id=class_id, confidence=conf,
                      timestamp=timestamp)
