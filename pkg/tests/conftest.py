"""Shared fixtures: tiny worlds and prebuilt layered maps for fast tests."""

import numpy as np
import pytest

from voxplore import GridConfig, Pose
from voxplore.fusion import CLASS_WALL, ScLayer
from voxplore.hierarchy import MultiLayerMap
from voxplore.measured import MeasuredLayer
from voxplore.world import GroundTruthWorld, WorldSpec, generate_world


def box_world(dims=(20, 20, 20), nu=0.08, start=None):
    """Hollow box world: occupied shell, free interior."""
    occ = np.zeros(dims, dtype=bool)
    occ[0, :, :] = occ[-1, :, :] = True
    occ[:, 0, :] = occ[:, -1, :] = True
    occ[:, :, 0] = occ[:, :, -1] = True
    cls = np.where(occ, CLASS_WALL, 0).astype(np.uint8)
    if start is None:
        start = Pose(dims[0] / 2 * nu, dims[1] / 2 * nu, dims[2] / 2 * nu)
    return GroundTruthWorld(GridConfig(voxel_size=nu), occ, cls, start)


def empty_map(bounds=((0, 0, 0), (32, 32, 32)), nu=0.08, tau_c=0.0):
    cfg = GridConfig(voxel_size=nu)
    bounds = (np.asarray(bounds[0], dtype=np.int64),
              np.asarray(bounds[1], dtype=np.int64))
    return MultiLayerMap(MeasuredLayer(cfg, bounds=bounds),
                         ScLayer(cfg, bounds=bounds), tau_c=tau_c)


@pytest.fixture
def small_world():
    return generate_world(WorldSpec(size_x=6.0, size_y=5.0, size_z=2.0,
                                    rooms=1, clutter=2), seed=0)
