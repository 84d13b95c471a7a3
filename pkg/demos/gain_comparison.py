"""Compare information gains head to head on the same world.

Runs one mission per gain with the perfect completion oracle and reports the
interpolated time until 80% of the observable space is sensor-measured.

    python3 demos/gain_comparison.py
"""

import time

from voxplore.fusion import FusionStrategy
from voxplore.metrics import time_to_goal
from voxplore.oracle import OracleMode
from voxplore.planner import GainKind
from voxplore.sim import MissionConfig, run_mission
from voxplore.world import WorldSpec, generate_world


def main():
    world = generate_world(WorldSpec(), seed=4)
    print(f"{'gain':>12} {'status':>7} {'T(M=80%)':>9} {'final M':>8} {'wall':>6}")
    for gain in (GainKind.EXPLORATION, GainKind.SC, GainKind.HYBRID,
                 GainKind.OCCUPIED, GainKind.CONFIDENCE):
        cfg = MissionConfig(t_max=120.0, seed=4, gain=gain,
                            oracle=OracleMode.perfect(),
                            fusion=FusionStrategy.OCCUPANCY,
                            snapshot_interval=1.0, stop_at_measured=0.81,
                            log_predictions=False)
        w0 = time.time()
        log = run_mission(world, cfg)
        t80 = time_to_goal(log.series("measured"), 0.8)
        print(f"{gain.value:>12} {log.status:>7} {t80:9.2f} "
              f"{log.metrics[-1].measured:8.3f} {time.time() - w0:5.1f}s")


if __name__ == "__main__":
    main()
