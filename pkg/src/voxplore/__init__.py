"""Voxel-based exploration mapping and next-best-view planning with
scene-completion priors."""

from .fusion import (ClassCalibration, FusionStrategy, Prediction, ScLayer,
                     fuse_prediction, log_odds, occupancy_update_weight, probability,
                     read_prediction_log, write_prediction_log)
from .grid import (FREE, OCCUPIED, UNKNOWN, BlockHashGrid, GridConfig, Pose,
                   index_to_center, traverse_ray, traverse_rays, world_to_index)
from .hierarchy import (MultiLayerMap, Source, TraversalMode, confidence_cutoffs,
                        load_snapshot)
from .measured import MeasuredLayer
from .metrics import (EvalSet, MetricsRecord, NOT_REACHED, ObservableSpace,
                      expected_performance, observable_space, snapshot, time_to_goal,
                      tradeoff_objective)
from .oracle import NoiseModel, OracleMode, predict, prediction_box
from .planner import (GainKind, NbvPlanner, PlannerConfig, PlannerNode, RaycastMode,
                      ViewTree, edge_cost, optimize_yaw, visible_voxels,
                      voxel_information)
from .sensor import SensorModel
from .sim import (CollisionEvent, MissionConfig, MissionLog, RobotState, build_map,
                  render_depth, run_mission, step_robot)
from .world import GroundTruthWorld, WorldSpec, generate_world, load_world, save_world

__version__ = "0.1.0"
