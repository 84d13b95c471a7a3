"""Mission objectives and evaluation metrics against ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .grid import FREE, OCCUPIED, UNKNOWN
from .world import SIX_CONN, GroundTruthWorld


class EvalSet(Enum):
    ALL_OBSERVABLE = "all"
    OBSERVED_ONLY = "observed"
    PREDICTED_ONLY = "predicted"   # observable voxels not measured by the sensor


@dataclass
class ObservableSpace:
    """Evaluable ground truth: free space reachable from the start pose plus a
    one-voxel shell into occupied space. Masks are dense over the world bounds."""

    mask: np.ndarray       # bool, member of the observable set
    gt_state: np.ndarray   # FREE / OCCUPIED over the whole world volume
    lo: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass
class MetricsRecord:
    t: float
    exploration: float       # fraction of observable voxels known in the map
    coverage: float          # fraction matching ground truth
    measured: float          # exploration counting only sensor-measured voxels
    precision: float | None  # accuracy over observed voxels; None if none observed
    precision_occ: float | None
    precision_free: float | None
    recall_occ: float | None
    recall_free: float | None
    collisions: int = 0

    def __post_init__(self):
        if self.exploration + 1e-12 < max(self.coverage, self.measured):
            raise ValueError("exploration must dominate coverage and measured volume")


def observable_space(world: GroundTruthWorld, start=None) -> ObservableSpace:
    """6-connected flood fill of free space from the start, extended one voxel
    into occupied space."""
    start_pose = world.start if start is None else start
    si = tuple((np.floor(np.asarray(start_pose.position) / world.cfg.voxel_size)
                .astype(int) - world.lo).tolist())
    if world.occ[si]:
        raise ValueError("start pose lies in occupied space")
    labels, _ = ndimage.label(~world.occ, structure=SIX_CONN)
    component = labels == labels[si]
    shell = ndimage.binary_dilation(component, structure=SIX_CONN) & world.occ
    gt = np.where(world.occ, OCCUPIED, FREE).astype(np.uint8)
    return ObservableSpace(mask=component | shell, gt_state=gt, lo=world.lo.copy())


def snapshot(mlmap, gt: ObservableSpace, t: float = 0.0, collisions: int = 0,
             eval_set: EvalSet = EvalSet.ALL_OBSERVABLE) -> MetricsRecord:
    """Metrics over the observable space for the current map state."""
    state, src = mlmap.state_volume()
    if state.shape != gt.mask.shape:
        raise ValueError("map and ground truth grids differ")
    domain = gt.mask
    if eval_set is EvalSet.OBSERVED_ONLY:
        domain = domain & (state != UNKNOWN)
    elif eval_set is EvalSet.PREDICTED_ONLY:
        domain = domain & (src != 1)
    n = int(np.count_nonzero(domain))
    if n == 0:
        return MetricsRecord(t, 0.0, 0.0, 0.0, None, None, None, None, None, collisions)

    m = state[domain]
    g = gt.gt_state[domain]
    s = src[domain]
    known = m != UNKNOWN
    correct = known & (m == g)

    e = float(np.count_nonzero(known)) / n
    c = float(np.count_nonzero(correct)) / n
    meas = float(np.count_nonzero(s == 1)) / n

    def frac(num, den):
        return float(num) / float(den) if den else None

    p = frac(np.count_nonzero(correct), np.count_nonzero(known))
    p_o = frac(np.count_nonzero((m == OCCUPIED) & (g == OCCUPIED)),
               np.count_nonzero(m == OCCUPIED))
    p_f = frac(np.count_nonzero((m == FREE) & (g == FREE)),
               np.count_nonzero(m == FREE))
    # Recall denominators only count ground-truth voxels already in the map.
    r_o = frac(np.count_nonzero((m == OCCUPIED) & (g == OCCUPIED)),
               np.count_nonzero((g == OCCUPIED) & known))
    r_f = frac(np.count_nonzero((m == FREE) & (g == FREE)),
               np.count_nonzero((g == FREE) & known))
    return MetricsRecord(t, e, c, meas, p, p_o, p_f, r_o, r_f, collisions)


NOT_REACHED = math.inf


def time_to_goal(series, goal: float) -> float:
    """First time a time-sorted (t, value) series reaches ``goal``, linearly
    interpolated between snapshots; NOT_REACHED (inf) if it never does."""
    if not series:
        raise ValueError("empty series")
    prev_t, prev_f = series[0]
    if prev_f >= goal:
        return float(prev_t)
    for t, f in series[1:]:
        if t < prev_t:
            raise ValueError("series must be time-sorted")
        if f >= goal:
            if f == prev_f:
                return float(t)
            return float(prev_t + (goal - prev_f) * (t - prev_t) / (f - prev_f))
        prev_t, prev_f = t, f
    return NOT_REACHED


def expected_performance(series, t_min: float, t_max: float) -> float:
    """Time-averaged value of a piecewise-linear series over [t_min, t_max]
    (trapezoidal rule)."""
    if t_min >= t_max:
        raise ValueError("t_min must be below t_max")
    ts = np.array([t for t, _ in series], dtype=np.float64)
    fs = np.array([f for _, f in series], dtype=np.float64)
    if ts[0] > t_min or ts[-1] < t_max:
        raise ValueError("series does not cover the requested window")
    grid = np.unique(np.concatenate([ts, [t_min, t_max]]))
    grid = grid[(grid >= t_min) & (grid <= t_max)]
    vals = np.interp(grid, ts, fs)
    return float(np.trapezoid(vals, grid) / (t_max - t_min))


def tradeoff_objective(record: MetricsRecord, weights, o_safe: int,
                       n_observable: int = 1) -> float:
    """Weighted mission objective: coverage count, accuracy, and safety."""
    a1, a2, a3 = weights
    if min(a1, a2, a3) < 0 or max(a1, a2, a3) <= 0:
        raise ValueError("weights must be non-negative with at least one positive")
    acc = record.precision if record.precision is not None else 0.0
    return a1 * record.coverage * n_observable + a2 * acc + a3 * float(o_safe)
