"""Command-line harness: single missions, batch sweeps, fusion replays, world
generation, and map evaluation.

Configuration is YAML with an explicit ``schema_version``. Two environment
variables are honored: ``VOXPLORE_OUT`` overrides the output directory and
``VOXPLORE_WORKERS`` the batch worker count; everything else comes from the
config file or flags so runs stay reproducible.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import yaml

from .fusion import (CLASS_NAMES, ClassCalibration, FusionStrategy, ScLayer,
                     fuse_prediction, read_prediction_log, write_prediction_log)
from .hierarchy import MultiLayerMap, TraversalMode, load_snapshot
from .measured import MeasuredLayer
from .metrics import EvalSet, observable_space, snapshot, time_to_goal
from .oracle import NoiseModel, OracleMode
from .planner import GainKind, PlannerConfig, RaycastMode
from .sensor import SensorModel
from .sim import MissionConfig, run_mission
from .world import GroundTruthWorld, WorldSpec, generate_world, load_world, save_world

log = logging.getLogger("voxplore")

SCHEMA_VERSION = 1

CLASS_IDS = {name: cid for cid, name in CLASS_NAMES.items()}

METRIC_COLUMNS = ["t", "E", "C", "M", "P", "P_o", "P_f", "R_o", "R_f",
                  "collisions", "tree_size", "best_utility"]
EVENT_COLUMNS = ["step", "t", "x", "y", "z", "yaw", "best_utility", "tree_size",
                 "gain_kind"]


# -- config loading ----------------------------------------------------------


def load_config(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise SystemExit(f"config {path} is not a mapping")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SystemExit(f"config {path}: unsupported schema_version {version!r} "
                         f"(expected {SCHEMA_VERSION})")
    return cfg


def _pop_fields(d: dict, cls, label: str):
    """Build a dataclass from a config section, rejecting unknown keys."""
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise SystemExit(f"{label}: unknown keys {sorted(unknown)}")
    return cls(**d)


def world_from_config(cfg: dict, config_dir: Path) -> GroundTruthWorld:
    section = dict(cfg.get("world", {}))
    kind = section.pop("kind", "generate")
    if kind == "file":
        path = section.pop("path", None)
        if path is None:
            raise SystemExit("world.kind=file requires world.path")
        if section:
            raise SystemExit(f"world: unknown keys {sorted(section)}")
        return load_world(config_dir / path)
    if kind != "generate":
        raise SystemExit(f"world.kind must be 'generate' or 'file', got {kind!r}")
    seed = section.pop("seed", 0)
    spec = _pop_fields(section, WorldSpec, "world")
    return generate_world(spec, seed=seed)


def _oracle_from_config(section):
    if section is None or section == "none":
        return None
    if section == "perfect":
        return OracleMode.perfect()
    if isinstance(section, dict):
        noise = dict(section.get("noise", {}))
        rates = {CLASS_IDS[k]: v for k, v in noise.pop("class_miss_rates", {}).items()}
        model = _pop_fields(noise, NoiseModel, "mission.oracle.noise")
        model.class_miss_rates = rates
        return OracleMode.with_noise(model)
    raise SystemExit(f"mission.oracle must be none, perfect, or a noise mapping, "
                     f"got {section!r}")


def mission_from_config(cfg: dict) -> MissionConfig:
    section = dict(cfg.get("mission", {}))
    oracle = _oracle_from_config(section.pop("oracle", None))
    fusion = FusionStrategy(section.pop("fusion", "occupancy"))
    gain = GainKind(section.pop("gain", "exploration"))
    eval_set = EvalSet(section.pop("eval_set", "all"))

    planner_sec = dict(cfg.get("planner", {}))
    raycast = RaycastMode(planner_sec.pop("raycast_mode", "nonblocking"))
    collision = TraversalMode(planner_sec.pop("collision_mode", "conservative"))
    planner = _pop_fields(planner_sec, PlannerConfig, "planner")
    planner.raycast_mode = raycast
    planner.collision_mode = collision

    sensor = _pop_fields(dict(cfg.get("sensor", {})), SensorModel, "sensor")

    calib_sec = dict(cfg.get("calibration", {}))
    occupied = {CLASS_IDS[k]: v for k, v in calib_sec.pop("occupied", {}).items()}
    calib = ClassCalibration()
    calib.occupied.update(occupied)
    if "p_free" in calib_sec:
        calib = ClassCalibration(occupied=calib.occupied,
                                 p_free=calib_sec.pop("p_free"))
    if calib_sec:
        raise SystemExit(f"calibration: unknown keys {sorted(calib_sec)}")

    mission = _pop_fields(section, MissionConfig, "mission")
    mission.oracle = oracle
    mission.fusion = fusion
    mission.gain = gain
    mission.eval_set = eval_set
    mission.planner = planner
    mission.sensor = sensor
    mission.calibration = calib
    return mission


# -- output writers ----------------------------------------------------------


def _fmt(v) -> str:
    """Stable scalar formatting: repr for floats so runs are byte-comparable."""
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, mission_log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for rec, size, util in zip(mission_log.metrics, mission_log.tree_sizes,
                                   mission_log.best_utilities):
            w.writerow([_fmt(v) for v in (
                rec.t, rec.exploration, rec.coverage, rec.measured, rec.precision,
                rec.precision_occ, rec.precision_free, rec.recall_occ,
                rec.recall_free, rec.collisions, size, util)])


def write_events_csv(path, mission_log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVENT_COLUMNS)
        for e in mission_log.events:
            w.writerow([_fmt(v) for v in (
                e.step, e.t, e.pose.x, e.pose.y, e.pose.z, e.pose.yaw,
                e.best_utility, e.tree_size, e.gain_kind)])


def write_series_svg(path, series_by_name, title, width=640, height=360):
    """Minimal line chart: one polyline per named (t, value) series."""
    pad = 48
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    all_pts = [p for s in series_by_name.values() for p in s]
    if not all_pts:
        raise ValueError("no data to chart")
    t_max = max(t for t, _ in all_pts) or 1.0
    v_max = max(max(v for _, v in all_pts), 1.0)
    sx = (width - 2 * pad) / t_max
    sy = (height - 2 * pad) / v_max
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width // 2}" y="20" text-anchor="middle" '
             f'font-family="sans-serif" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
             f'y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
             f'stroke="black"/>']
    for i, (name, series) in enumerate(series_by_name.items()):
        color = colors[i % len(colors)]
        pts = " ".join(f"{pad + t * sx:.2f},{height - pad - v * sy:.2f}"
                       for t, v in series)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 16 * i}" fill="{color}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def _out_dir(args) -> Path:
    base = os.environ.get("VOXPLORE_OUT")
    out = Path(args.out)
    if base and not out.is_absolute():
        out = Path(base) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_run(args):
    cfg = load_config(args.config)
    out = _out_dir(args)
    world = world_from_config(cfg, Path(args.config).resolve().parent)
    mission = mission_from_config(cfg)
    log.info("running mission: t_max=%s gain=%s fusion=%s", mission.t_max,
             mission.gain.value, mission.fusion.value)
    result = run_mission(world, mission)
    save_world(world, out / "world.txt")
    write_metrics_csv(out / "metrics.csv", result)
    write_events_csv(out / "events.csv", result)
    if mission.log_predictions and result.predictions:
        write_prediction_log(out / "predictions.log", result.predictions)
    if args.svg:
        write_series_svg(out / "metrics.svg", {
            "E": result.series("exploration"),
            "C": result.series("coverage"),
            "M": result.series("measured"),
        }, "mission metrics")
    last = result.metrics[-1]
    print(f"status={result.status} t={last.t:.2f} E={last.exploration:.3f} "
          f"C={last.coverage:.3f} M={last.measured:.3f} "
          f"collisions={len(result.collisions)}")
    return 0 if result.status in ("ok", "stuck", "empty") else 1


def _batch_variants(cfg: dict):
    batch = cfg.get("batch", {})
    seeds = batch.get("seeds", [0])
    gains = batch.get("gains", [cfg.get("mission", {}).get("gain", "exploration")])
    fusions = batch.get("fusions",
                        [cfg.get("mission", {}).get("fusion", "occupancy")])
    for seed in seeds:
        for gain in gains:
            for fusion in fusions:
                yield seed, gain, fusion


def _run_variant(packed):
    cfg, config_dir, seed, gain, fusion, out = packed
    cfg = dict(cfg)
    cfg["mission"] = dict(cfg.get("mission", {}))
    cfg["mission"]["seed"] = seed
    cfg["mission"]["gain"] = gain
    cfg["mission"]["fusion"] = fusion
    cfg["world"] = dict(cfg.get("world", {}))
    if cfg["world"].get("kind", "generate") == "generate":
        cfg["world"]["seed"] = seed
    world = world_from_config(cfg, Path(config_dir))
    mission = mission_from_config(cfg)
    result = run_mission(world, mission)
    name = f"seed{seed}_{gain}_{fusion}"
    run_dir = Path(out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_dir / "metrics.csv", result)
    write_events_csv(run_dir / "events.csv", result)
    last = result.metrics[-1]
    t80 = time_to_goal(result.series("measured"), 0.8)
    return (name, seed, gain, fusion, result.status, last.t, last.exploration,
            last.coverage, last.measured, len(result.collisions),
            t80 if math.isfinite(t80) else "")


def cmd_batch(args):
    cfg = load_config(args.config)
    out = _out_dir(args)
    config_dir = str(Path(args.config).resolve().parent)
    variants = [(cfg, config_dir, seed, gain, fusion, str(out))
                for seed, gain, fusion in _batch_variants(cfg)]
    workers = int(os.environ.get("VOXPLORE_WORKERS", args.workers))
    log.info("batch: %d variants, %d workers", len(variants), workers)
    if workers > 1:
        with get_context("spawn").Pool(workers) as pool:
            rows = pool.map(_run_variant, variants)
    else:
        rows = [_run_variant(v) for v in variants]
    with open(out / "batch_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "seed", "gain", "fusion", "status", "t", "E", "C", "M",
                    "collisions", "t_m80"])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    print(f"batch complete: {len(rows)} runs -> {out / 'batch_summary.csv'}")
    return 0


def cmd_replay_fusion(args):
    out = _out_dir(args)
    world = load_world(args.world)
    records = read_prediction_log(args.log)
    strategy = FusionStrategy(args.fusion)
    calib = ClassCalibration()
    sc = ScLayer(world.cfg, bounds=world.bounds_index())
    measured = MeasuredLayer(world.cfg, bounds=world.bounds_index())
    mlmap = MultiLayerMap(measured, sc, tau_c=args.tau_c)
    gt = observable_space(world)
    rows = []
    for i, (pred, mask) in enumerate(records):
        fuse_prediction(pred, sc, strategy, calib, measured_mask=mask)
        rec = snapshot(mlmap, gt, t=pred.timestamp, eval_set=EvalSet.ALL_OBSERVABLE)
        rows.append((i, pred.timestamp, rec.exploration, rec.coverage, rec.precision,
                     rec.precision_occ, rec.precision_free, rec.recall_occ,
                     rec.recall_free))
    with open(out / "replay.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["idx", "t", "E", "C", "P", "P_o", "P_f", "R_o", "R_f"])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    last = rows[-1] if rows else None
    if last is None:
        print("replay: empty prediction log")
        return 1
    print(f"replayed {len(rows)} predictions with {strategy.value}: "
          f"E={last[2]:.3f} C={last[3]:.3f}")
    return 0


def cmd_gen_world(args):
    spec = WorldSpec(size_x=args.size_x, size_y=args.size_y, size_z=args.size_z,
                     rooms=args.rooms, clutter=args.clutter,
                     voxel_size=args.voxel_size)
    world = generate_world(spec, seed=args.seed)
    save_world(world, args.out)
    gt = observable_space(world)
    print(f"world seed={args.seed} dims={world.shape} "
          f"observable={gt.count} -> {args.out}")
    return 0


def cmd_eval_map(args):
    world = load_world(args.world)
    idx, states, lods, tau_c = load_snapshot(args.snapshot)
    measured = MeasuredLayer(world.cfg, bounds=world.bounds_index())
    sc = ScLayer(world.cfg, bounds=world.bounds_index())
    known = states != 0
    if np.any(known):
        measured.grid.write("observed", idx[known], True, op="set")
        measured.grid.write("log_odds", idx[known],
                            np.where(states[known] == 2, 1.0, -1.0), op="set")
    touched = np.isfinite(lods)
    if np.any(touched):
        sc.grid.write("log_odds", idx[touched], lods[touched], op="set")
        sc.grid.write("touched", idx[touched], True, op="set")
    mlmap = MultiLayerMap(measured, sc, tau_c=tau_c)
    gt = observable_space(world)
    rec = snapshot(mlmap, gt, eval_set=EvalSet(args.eval_set))
    print(f"E={rec.exploration:.4f} C={rec.coverage:.4f} M={rec.measured:.4f}")
    for name, v in (("P", rec.precision), ("P_o", rec.precision_occ),
                    ("P_f", rec.precision_free), ("R_o", rec.recall_occ),
                    ("R_f", rec.recall_free)):
        print(f"{name}={'n/a' if v is None else f'{v:.4f}'}")
    return 0


# -- entry point -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voxplore",
        description="voxel exploration mapping and planning missions")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one closed-loop mission")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--svg", action="store_true", help="write metric charts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a seed/gain/fusion sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("replay-fusion", help="re-fuse a prediction log offline")
    p.add_argument("--log", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--fusion", default="occupancy",
                   choices=[s.value for s in FusionStrategy])
    p.add_argument("--tau-c", type=float, default=0.0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_replay_fusion)

    p = sub.add_parser("gen-world", help="generate a procedural world file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="world.txt")
    p.add_argument("--size-x", type=float, default=12.0)
    p.add_argument("--size-y", type=float, default=9.0)
    p.add_argument("--size-z", type=float, default=2.6)
    p.add_argument("--rooms", type=int, default=3)
    p.add_argument("--clutter", type=int, default=6)
    p.add_argument("--voxel-size", type=float, default=0.08)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("eval-map", help="score a map snapshot against a world")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--eval-set", default="all",
                   choices=[s.value for s in EvalSet])
    p.set_defaults(func=cmd_eval_map)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
