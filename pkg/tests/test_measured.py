"""Measured-layer tests: ray-carving integration, state semantics, and the
dense kernel path against the generic sparse path."""

import math

import numpy as np
import pytest

from voxplore.grid import FREE, OCCUPIED, UNKNOWN, GridConfig, Pose
from voxplore.measured import LAMBDA_FREE, LAMBDA_OCC, MeasuredLayer
from voxplore.sensor import SensorModel

CFG = GridConfig(voxel_size=0.08)

# A one-pixel camera: the single ray points straight along the pose yaw.
ONE_RAY = SensorModel(h_fov_deg=1e-6, v_fov_deg=1e-6, max_range=5.0,
                      width=1, height=1)


class TestStates:
    def test_unobserved_is_unknown(self):
        layer = MeasuredLayer(CFG)
        assert layer.state_one((3, 4, 5)) == UNKNOWN

    def test_sign_convention(self):
        layer = MeasuredLayer(CFG)
        layer._apply(np.array([[0, 0, 0]]), LAMBDA_OCC)
        layer._apply(np.array([[1, 0, 0]]), LAMBDA_FREE)
        assert layer.state_one((0, 0, 0)) == OCCUPIED
        assert layer.state_one((1, 0, 0)) == FREE


class TestIntegrateDepth:
    def test_single_ray_hit_at_one_meter(self):
        # 12 free voxels before the surface plus the occupied surface voxel.
        layer = MeasuredLayer(CFG)
        pose = Pose(1e-9, 0.04, 0.04, 0.0)
        layer.integrate_depth(pose, np.array([[1.0]]), ONE_RAY)
        states = layer.state(np.array([[i, 0, 0] for i in range(14)]))
        assert np.all(states[:12] == FREE)
        assert states[12] == OCCUPIED
        assert states[13] == UNKNOWN  # occlusion: nothing beyond the surface

    def test_no_hit_carves_to_max_range(self):
        layer = MeasuredLayer(CFG)
        pose = Pose(1e-9, 0.04, 0.04, 0.0)
        layer.integrate_depth(pose, np.array([[math.inf]]), ONE_RAY)
        n = int(ONE_RAY.max_range / CFG.voxel_size)
        states = layer.state(np.array([[i, 0, 0] for i in range(n)]))
        assert np.all(states == FREE)

    def test_empty_depth_is_noop(self):
        layer = MeasuredLayer(CFG)
        layer.integrate_depth(Pose(0.1, 0.1, 0.1), np.zeros((0, 0)), ONE_RAY)
        assert layer.state_one((0, 0, 0)) == UNKNOWN

    def test_repeated_frames_monotone_log_odds(self):
        layer = MeasuredLayer(CFG)
        pose = Pose(1e-9, 0.04, 0.04, 0.0)
        layer.integrate_depth(pose, np.array([[1.0]]), ONE_RAY)
        idx = np.array([[3, 0, 0], [12, 0, 0]])
        first = layer.grid.read("log_odds", idx).copy()
        s1 = layer.state(idx).copy()
        layer.integrate_depth(pose, np.array([[1.0]]), ONE_RAY)
        second = layer.grid.read("log_odds", idx)
        assert np.array_equal(layer.state(idx), s1)
        assert np.all(np.abs(second) > np.abs(first))

    def test_occupied_wins_within_one_frame(self):
        # A dense fan where some rays graze the voxel another ray hits: the
        # hit voxel must come out occupied, not free.
        sensor = SensorModel(h_fov_deg=60.0, v_fov_deg=40.0, max_range=5.0)
        layer = MeasuredLayer(CFG)
        pose = Pose(0.52, 0.52, 0.52, 0.0)
        depth = np.full((20, 30), 1.0)
        layer.integrate_depth(pose, depth, sensor)
        dirs = sensor.ray_directions(0.0, width=30, height=20)
        hits = np.floor((pose.position + dirs * (1.0 + 1e-6 * 0.08)) /
                        CFG.voxel_size).astype(np.int64)
        assert np.all(layer.state(hits) == OCCUPIED)

    def test_pose_outside_bounds_raises(self):
        layer = MeasuredLayer(CFG, bounds=((0, 0, 0), (10, 10, 10)))
        with pytest.raises(ValueError):
            layer.integrate_depth(Pose(5.0, 5.0, 5.0), np.array([[1.0]]), ONE_RAY)

    def test_dense_path_matches_sparse_path(self):
        # Depth frames come from the renderer so each value is an exact
        # voxel-entry distance, which is what integrate_depth consumes.
        from conftest import box_world
        from voxplore.sim import render_depth

        sensor = SensorModel(h_fov_deg=90.0, v_fov_deg=73.7, max_range=3.0)
        rng = np.random.default_rng(7)
        world = box_world((38, 33, 28), CFG.voxel_size)
        bounded = MeasuredLayer(CFG, bounds=((-10, -10, -10), (50, 50, 50)))
        sparse = MeasuredLayer(CFG)
        for _ in range(3):
            pose = Pose(*rng.uniform(0.5, 1.6, size=3), rng.uniform(-3, 3))
            depth = render_depth(pose, world, sensor, width=16, height=12)
            bounded.integrate_depth(pose, depth, sensor)
            sparse.integrate_depth(pose, depth, sensor)
        probe = rng.integers(-10, 50, size=(5000, 3))
        assert np.array_equal(bounded.state(probe), sparse.state(probe))
        np.testing.assert_allclose(bounded.grid.read("log_odds", probe),
                                   sparse.grid.read("log_odds", probe),
                                   atol=1e-12)


class TestMarkFreeSphere:
    def test_marks_observed_free(self):
        layer = MeasuredLayer(CFG)
        layer.mark_free_sphere((0.4, 0.4, 0.4), 0.2)
        assert layer.state_one((4, 4, 4)) == FREE
        # voxel centers farther than the radius stay unknown
        assert layer.state_one((12, 4, 4)) == UNKNOWN
