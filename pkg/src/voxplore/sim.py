"""Deterministic closed-loop simulation: depth rendering, velocity-ramp motion,
collision accounting, and the sense -> fuse -> plan -> move mission loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import render_rays
from .fusion import ClassCalibration, FusionStrategy, ScLayer, fuse_prediction
from .grid import FREE, OCCUPIED, UNKNOWN, GridConfig, Pose, normalize_angle, traverse_rays
from .hierarchy import MultiLayerMap, TraversalMode
from .measured import MeasuredLayer
from .metrics import EvalSet, MetricsRecord, observable_space, snapshot
from .oracle import OracleMode, predict
from .planner import (GainKind, NbvPlanner, PlannerConfig, RaycastMode, edge_cost,
                      ramp_time)
from .sensor import SensorModel
from .world import GroundTruthWorld


def render_depth(pose: Pose, world: GroundTruthWorld, sensor: SensorModel,
                 width=None, height=None, pitch: float = 0.0) -> np.ndarray:
    """Per-pixel distance to the first ground-truth-occupied voxel (inf = no hit
    within range); deterministic for a fixed pose."""
    if not world.contains(pose.position):
        raise ValueError(f"pose {pose} out of bounds")
    w = sensor.width if width is None else width
    h = sensor.height if height is None else height
    dirs = np.ascontiguousarray(sensor.ray_directions(pose.yaw, width=w, height=h,
                                                      pitch=pitch))
    depth = np.empty(dirs.shape[0], dtype=np.float64)
    render_rays(pose.position, dirs, float(sensor.max_range),
                float(world.cfg.voxel_size), world.lo.astype(np.int64),
                world.occ, depth)
    return depth.reshape(h, w)


# -- robot motion ------------------------------------------------------------


@dataclass
class RobotState:
    pose: Pose
    target: Pose | None = None
    seg_elapsed: float = 0.0
    seg_origin: Pose | None = None

    @property
    def moving(self) -> bool:
        return self.target is not None


def set_target(state: RobotState, target: Pose):
    state.target = target
    state.seg_origin = replace(state.pose)
    state.seg_elapsed = 0.0


def step_robot(state: RobotState, dt: float, cfg: PlannerConfig) -> float:
    """Advance the robot along its segment for ``dt`` seconds; returns the
    simulated time actually consumed (less than dt on arrival)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not state.moving:
        return 0.0
    a, b = state.seg_origin, state.target
    delta = b.position - a.position
    dist = float(np.linalg.norm(delta))
    t_trans = ramp_time(dist, cfg.v_max, cfg.a_max)
    dyaw = normalize_angle(b.yaw - a.yaw)
    t_yaw = abs(dyaw) / cfg.yaw_rate_max
    total = max(t_trans, t_yaw)

    raw = state.seg_elapsed + dt
    state.seg_elapsed = min(raw, total)
    el = state.seg_elapsed
    s = _ramp_distance(min(el, t_trans), dist, cfg.v_max, cfg.a_max)
    frac = s / dist if dist > 0 else 1.0
    pos = a.position + delta * frac
    yaw_frac = min(el / t_yaw, 1.0) if t_yaw > 0 else 1.0
    yaw = normalize_angle(a.yaw + dyaw * yaw_frac)
    state.pose = Pose(pos[0], pos[1], pos[2], yaw)
    if el >= total:
        state.pose = replace(b)
        state.target = None
        state.seg_origin = None
        consumed = dt - (raw - total)
        state.seg_elapsed = 0.0
        return min(max(consumed, 0.0), dt)
    return dt


def _ramp_distance(t: float, dist: float, v_max: float, a_max: float) -> float:
    """Distance covered after time t of the trapezoidal profile for ``dist``."""
    if dist <= 0:
        return 0.0
    if not math.isfinite(a_max):
        return min(v_max * t, dist)
    v_peak = min(v_max, math.sqrt(dist * a_max))
    t_acc = v_peak / a_max
    d_acc = 0.5 * a_max * t_acc * t_acc
    t_cruise = max((dist - 2.0 * d_acc) / v_max, 0.0)
    if t <= t_acc:
        return 0.5 * a_max * t * t
    if t <= t_acc + t_cruise:
        return d_acc + v_peak * (t - t_acc)
    td = t - t_acc - t_cruise
    td = min(td, t_acc)
    return d_acc + v_peak * t_cruise + v_peak * td - 0.5 * a_max * td * td


# -- mission configuration and log -------------------------------------------


@dataclass
class MissionConfig:
    t_max: float = 60.0
    seed: int = 0
    dt: float = 0.05
    sensor_rate: float = 5.0          # depth frames per simulated second
    prediction_rate: float = 1.24     # oracle predictions per simulated second
    snapshot_interval: float = 10.0
    integration_scale: int = 2        # depth render density multiplier for mapping
    prediction_quadrants: int = 4     # yaw quadrants completed per prediction tick
    tau_c: float = 0.0
    fusion: FusionStrategy = FusionStrategy.OCCUPANCY
    gain: GainKind = GainKind.EXPLORATION
    oracle: OracleMode | None = None  # None disables scene completion
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    calibration: ClassCalibration = field(default_factory=ClassCalibration)
    eval_set: EvalSet = EvalSet.ALL_OBSERVABLE
    log_predictions: bool = True
    stop_at_measured: float | None = None  # optional early stop on measured fraction

    def __post_init__(self):
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")


@dataclass
class PlannerEvent:
    step: int
    t: float
    pose: Pose
    best_utility: float
    tree_size: int
    gain_kind: str


@dataclass
class CollisionEvent:
    t: float
    pose: Pose


@dataclass
class MissionLog:
    status: str = "ok"            # ok | stuck | collision | empty
    metrics: list = field(default_factory=list)
    events: list = field(default_factory=list)
    predictions: list = field(default_factory=list)   # (Prediction, measured_mask)
    collisions: list = field(default_factory=list)
    tree_sizes: list = field(default_factory=list)
    best_utilities: list = field(default_factory=list)
    elapsed: float = 0.0
    executed_cost: float = 0.0
    idle_time: float = 0.0        # simulated time spent parked between targets
    failed_selections: int = 0

    @property
    def o_safe(self) -> int:
        return 0 if self.collisions else 1

    def series(self, attr: str):
        return [(r.t, getattr(r, attr)) for r in self.metrics]


# -- the mission loop --------------------------------------------------------


def build_map(world: GroundTruthWorld, tau_c: float = 0.0,
              collision_radius: float = 0.35) -> MultiLayerMap:
    bounds = world.bounds_index()
    cfg = world.cfg
    return MultiLayerMap(MeasuredLayer(cfg, bounds=bounds), ScLayer(cfg, bounds=bounds),
                         tau_c=tau_c, collision_radius=collision_radius)


def run_mission(world: GroundTruthWorld, cfg: MissionConfig) -> MissionLog:
    """Closed mission loop: sense, integrate, predict/fuse, plan, move.

    Deterministic for a fixed (world, config, seed). Returns the mission log;
    the built map is attached as ``log.map`` for further evaluation.
    """
    log = MissionLog()
    mlmap = build_map(world, tau_c=cfg.tau_c,
                      collision_radius=cfg.planner.collision_radius)
    log.map = mlmap
    log.planner = None
    gt = observable_space(world)
    log.observable = gt
    if cfg.t_max == 0:
        log.status = "empty"
        return log

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB0B]))
    sensor = cfg.sensor
    nu = world.cfg.voxel_size
    margin = cfg.planner.collision_radius + 2.0 * nu
    lo_m = (world.lo.astype(float) * nu) + margin
    hi_m = (world.hi.astype(float) * nu) - margin
    planner = NbvPlanner(mlmap, sensor, cfg.planner, cfg.gain, rng,
                         bounds_m=(lo_m, hi_m))
    log.planner = planner
    planner.reset(replace(world.start))
    robot = RobotState(pose=replace(world.start))

    scale = max(int(cfg.integration_scale), 1)
    int_w, int_h = sensor.width * scale, sensor.height * scale

    # Bootstrap: clear the robot's own sphere and take a pitched panoramic scan
    # (a spin with the camera tilted level, up, and down) so conservative
    # planning has measured free space in every direction to work with.
    mlmap.measured.mark_free_sphere(robot.pose.position,
                                    cfg.planner.collision_radius + 2.0 * nu)
    tilt = math.radians(50.0)
    for pitch in (0.0, tilt, -tilt):
        for k in range(4):
            yaw = normalize_angle(world.start.yaw + k * math.pi / 2.0)
            p = Pose(robot.pose.x, robot.pose.y, robot.pose.z, yaw)
            depth = render_depth(p, world, sensor, width=int_w, height=int_h,
                                 pitch=pitch)
            mlmap.measured.integrate_depth(p, depth, sensor, pitch=pitch)
    t = 0.0
    sensor_period = 1.0 / cfg.sensor_rate
    pred_period = 1.0 / cfg.prediction_rate if cfg.prediction_rate > 0 else math.inf
    next_sensor = 0.0
    next_pred = 0.0 if cfg.oracle is not None else math.inf
    next_snap = 0.0
    next_select = 0.0
    select_backoff = 0.25   # retry cadence after a no-utility planning step
    step = 0

    def take_snapshot():
        rec = snapshot(mlmap, gt, t=t, collisions=len(log.collisions),
                       eval_set=cfg.eval_set)
        log.metrics.append(rec)
        log.tree_sizes.append(len(planner.tree))
        log.best_utilities.append(planner.best_utility)
        return rec

    while t < cfg.t_max:
        if t >= next_sensor:
            depth = render_depth(robot.pose, world, sensor, width=int_w, height=int_h)
            mlmap.measured.integrate_depth(robot.pose, depth, sensor)
            next_sensor += sensor_period
        if t >= next_pred:
            # Complete the volume ahead of the camera; with
            # prediction_quadrants > 1, additional rotated volumes surround
            # the robot instead of covering only the instantaneous heading.
            for k in range(max(1, cfg.prediction_quadrants)):
                ppose = Pose(robot.pose.x, robot.pose.y, robot.pose.z,
                             normalize_angle(robot.pose.yaw + k * math.pi / 2.0))
                pred = predict(ppose, world, cfg.oracle, timestamp=t)
                mask = (mlmap.measured.state(pred.voxel_indices()) != UNKNOWN) \
                    .reshape(pred.dims)
                fuse_prediction(pred, mlmap.sc, cfg.fusion, cfg.calibration,
                                measured_mask=mask)
                if cfg.log_predictions:
                    log.predictions.append((pred, mask))
            next_pred += pred_period
            # Fresh predictions can turn zero-gain candidates into valuable
            # ones; sweep them eagerly, out to the reach of the new volumes.
            planner.refresh_stale_gains(robot.pose, budget=32,
                                        radius=sensor.max_range + 4.8)

        # Keep sampling after the tree is full (pruning makes room), at a lower
        # rate while driving; while the robot is idle the planner needs new
        # candidates, so it always gets the full budget then.
        if not robot.moving or len(planner.tree) < cfg.planner.max_nodes:
            attempts = cfg.planner.expansions_per_step
        else:
            attempts = max(1, cfg.planner.expansions_per_step // 5)
        for _ in range(attempts):
            planner.expand()

        if not robot.moving and t >= next_select:
            planner.refresh_stale_gains(robot.pose)
            target = planner.select_and_execute()
            step += 1
            if target is None:
                # Back off so the tree (and incoming predictions) get time to
                # produce new candidates before the next attempt.
                log.failed_selections += 1
                next_select = t + select_backoff
                if planner.stuck:
                    log.status = "stuck"
                    break
            else:
                tree = planner.tree
                log.events.append(PlannerEvent(step, t, replace(target),
                                               planner.best_utility, len(tree),
                                               cfg.gain.value))
                log.executed_cost += edge_cost(robot.pose, target, cfg.planner)
                set_target(robot, target)

        if not robot.moving:
            log.idle_time += cfg.dt
        if robot.moving:
            step_robot(robot, cfg.dt, cfg.planner)
            if not robot.moving:
                # Arrived: make sure a frame from the new viewpoint is
                # integrated before the next selection.
                next_sensor = min(next_sensor, t + cfg.dt)
        t += cfg.dt

        # Collision accounting against ground truth.
        if _robot_collides(robot.pose, world, cfg.planner.collision_radius):
            log.collisions.append(CollisionEvent(t, replace(robot.pose)))
            log.status = "collision"
            take_snapshot()
            break

        if t >= next_snap:
            rec = take_snapshot()
            next_snap += cfg.snapshot_interval
            if cfg.stop_at_measured is not None and rec.measured >= cfg.stop_at_measured:
                break

    log.elapsed = t
    if not log.metrics or log.metrics[-1].t < t:
        take_snapshot()
    return log


def _robot_collides(pose: Pose, world: GroundTruthWorld, radius: float) -> bool:
    nu = world.cfg.voxel_size
    r = int(math.ceil(radius / nu)) + 1
    c = np.floor(pose.position / nu).astype(np.int64)
    rng = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    idx = c + off
    centers = (idx + 0.5) * nu
    within = np.linalg.norm(centers - pose.position, axis=1) <= radius
    if not np.any(within):
        return False
    return bool(np.any(world.occupied_at(idx[within])))
