"""Quickstart: generate a procedural world, fly a short mission, print metrics.

Run from the repository root:

    python3 demos/quickstart.py
"""

from voxplore.fusion import FusionStrategy
from voxplore.oracle import OracleMode
from voxplore.planner import GainKind
from voxplore.sim import MissionConfig, run_mission
from voxplore.world import WorldSpec, generate_world


def main():
    world = generate_world(WorldSpec(size_x=9.0, size_y=7.0, size_z=2.4,
                                     rooms=2, clutter=4), seed=7)
    print(f"world: {world.occ.shape} voxels, "
          f"{int(world.occ.sum())} occupied, start {world.start}")

    cfg = MissionConfig(t_max=20.0, seed=7, gain=GainKind.HYBRID,
                        oracle=OracleMode.perfect(),
                        fusion=FusionStrategy.OCCUPANCY,
                        snapshot_interval=5.0)
    log = run_mission(world, cfg)

    print(f"mission status: {log.status}, elapsed {log.elapsed:.1f} s, "
          f"collisions {len(log.collisions)}")
    print(f"{'t':>6} {'explored':>9} {'coverage':>9} {'measured':>9} {'P':>6}")
    for rec in log.metrics:
        p = f"{rec.precision:.3f}" if rec.precision is not None else "  n/a"
        print(f"{rec.t:6.1f} {rec.exploration:9.3f} {rec.coverage:9.3f} "
              f"{rec.measured:9.3f} {p:>6}")


if __name__ == "__main__":
    main()
