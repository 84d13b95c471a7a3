"""Fuse one noisy prediction stream under all five strategies and compare.

A short mission records its prediction stream; the same stream is then
re-fused offline into a fresh SC layer per strategy, and the resulting
precision/recall over the predicted region is tabulated.

    python3 demos/fusion_strategies.py
"""

from voxplore.fusion import ClassCalibration, FusionStrategy, ScLayer, fuse_prediction
from voxplore.hierarchy import MultiLayerMap
from voxplore.measured import MeasuredLayer
from voxplore.metrics import EvalSet, observable_space, snapshot
from voxplore.oracle import NoiseModel, OracleMode
from voxplore.planner import GainKind
from voxplore.sim import MissionConfig, run_mission
from voxplore.world import WorldSpec, generate_world


def main():
    world = generate_world(WorldSpec(size_x=9.0, size_y=7.0, size_z=2.4,
                                     rooms=2, clutter=4), seed=3)
    noisy = OracleMode.with_noise(NoiseModel(miss_rate=0.07,
                                             hallucination_rate=0.1, seed=3))
    cfg = MissionConfig(t_max=15.0, seed=3, gain=GainKind.EXPLORATION,
                        oracle=noisy, snapshot_interval=5.0)
    log = run_mission(world, cfg)
    print(f"recorded {len(log.predictions)} predictions "
          f"(mission status {log.status})")

    gt = observable_space(world)
    calib = ClassCalibration()
    print(f"{'strategy':>14} {'P':>6} {'P_o':>6} {'P_f':>6} {'R_o':>6} {'R_f':>6}")
    for strategy in FusionStrategy:
        layer = ScLayer(world.cfg, bounds=world.bounds_index())
        for pred, mask in log.predictions:
            fuse_prediction(pred, layer, strategy, calib, measured_mask=mask)
        mlmap = MultiLayerMap(MeasuredLayer(world.cfg, bounds=world.bounds_index()),
                              layer)
        rec = snapshot(mlmap, gt, eval_set=EvalSet.PREDICTED_ONLY)

        def fmt(v):
            return f"{v:6.3f}" if v is not None else "   n/a"

        print(f"{strategy.value:>14} {fmt(rec.precision)} {fmt(rec.precision_occ)} "
              f"{fmt(rec.precision_free)} {fmt(rec.recall_occ)} {fmt(rec.recall_free)}")


if __name__ == "__main__":
    main()
