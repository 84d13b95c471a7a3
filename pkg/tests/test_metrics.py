"""Metrics tests: observable space, a fully hand-checked snapshot, goal
interpolation, expected performance, and the trade-off objective."""

import math

import numpy as np
import pytest

from voxplore.fusion import CLASS_WALL, ScLayer
from voxplore.grid import GridConfig, Pose
from voxplore.hierarchy import MultiLayerMap
from voxplore.measured import LAMBDA_FREE, LAMBDA_OCC, MeasuredLayer
from voxplore.metrics import (NOT_REACHED, EvalSet, expected_performance,
                              observable_space, snapshot, time_to_goal,
                              tradeoff_objective)
from voxplore.world import GroundTruthWorld

NU = 0.08
CFG = GridConfig(voxel_size=NU)


def hand_world():
    """5 x 2 x 1 world: a two-voxel wall at x = 4, eight free voxels, start in
    the corner. Observable space is all ten voxels."""
    occ = np.zeros((5, 2, 1), dtype=bool)
    occ[4, :, 0] = True
    cls = np.where(occ, CLASS_WALL, 0).astype(np.uint8)
    return GroundTruthWorld(CFG, occ, cls, Pose(0.04, 0.04, 0.04))


def hand_map(world):
    """Hand-set map over the hand world.

    measured: (0,0,0) free/correct, (1,0,0) occupied/wrong, (4,0,0) occupied/correct
    predicted: (2,0,0) occupied/wrong, (3,1,0) free/correct, (4,1,0) free/wrong
    """
    bounds = world.bounds_index()
    m = MultiLayerMap(MeasuredLayer(CFG, bounds=bounds),
                      ScLayer(CFG, bounds=bounds))
    m.measured._apply(np.array([[0, 0, 0]]), LAMBDA_FREE)
    m.measured._apply(np.array([[1, 0, 0], [4, 0, 0]]), LAMBDA_OCC)
    sc_idx = np.array([[2, 0, 0], [3, 1, 0], [4, 1, 0]])
    m.sc.grid.write("log_odds", sc_idx, [2.0, -2.0, -2.0], op="set")
    m.sc.grid.write("touched", sc_idx, True, op="set")
    return m


class TestObservableSpace:
    def test_hand_world_count(self):
        gt = observable_space(hand_world())
        assert gt.count == 10
        assert gt.mask.all()

    def test_sealed_cavity_excluded(self):
        occ = np.zeros((7, 7, 3), dtype=bool)
        occ[2:5, 2:5, :] = True
        occ[3, 3, 1] = False  # a free voxel sealed inside the block
        cls = np.where(occ, CLASS_WALL, 0).astype(np.uint8)
        world = GroundTruthWorld(CFG, occ, cls, Pose(0.04, 0.04, 0.04))
        gt = observable_space(world)
        assert not gt.mask[3, 3, 1]
        # the outer shell of the block is observable; the two occupied voxels
        # that only touch the cavity are not
        assert gt.mask[2, 3, 1]
        assert not gt.mask[3, 3, 0] and not gt.mask[3, 3, 2]
        assert gt.count == 7 * 7 * 3 - 3

    def test_start_in_occupied_rejected(self):
        world = hand_world()
        with pytest.raises(ValueError):
            observable_space(world, start=Pose(4 * NU + 0.04, 0.04, 0.04))


class TestSnapshot:
    def test_hand_values_all_observable(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world), t=3.0,
                       collisions=1)
        assert rec.t == 3.0 and rec.collisions == 1
        assert rec.exploration == pytest.approx(6 / 10)
        assert rec.coverage == pytest.approx(3 / 10)
        assert rec.measured == pytest.approx(3 / 10)
        assert rec.precision == pytest.approx(3 / 6)
        assert rec.precision_occ == pytest.approx(1 / 3)
        assert rec.precision_free == pytest.approx(2 / 3)
        assert rec.recall_occ == pytest.approx(1 / 2)
        assert rec.recall_free == pytest.approx(2 / 4)

    def test_hand_values_observed_only(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world),
                       eval_set=EvalSet.OBSERVED_ONLY)
        assert rec.exploration == pytest.approx(1.0)
        assert rec.coverage == pytest.approx(3 / 6)
        assert rec.measured == pytest.approx(3 / 6)

    def test_hand_values_predicted_only(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world),
                       eval_set=EvalSet.PREDICTED_ONLY)
        # domain drops the three measured voxels; of the three predicted ones
        # only (3,1,0) is correct
        assert rec.exploration == pytest.approx(3 / 7)
        assert rec.coverage == pytest.approx(1 / 7)
        assert rec.measured == 0.0

    def test_empty_map_metrics(self):
        world = hand_world()
        bounds = world.bounds_index()
        m = MultiLayerMap(MeasuredLayer(CFG, bounds=bounds),
                          ScLayer(CFG, bounds=bounds))
        rec = snapshot(m, observable_space(world))
        assert rec.exploration == rec.coverage == rec.measured == 0.0
        assert rec.precision is None and rec.recall_occ is None

    def test_grid_mismatch_rejected(self):
        world = hand_world()
        other = MultiLayerMap(MeasuredLayer(CFG, bounds=((0, 0, 0), (3, 3, 3))),
                              ScLayer(CFG, bounds=((0, 0, 0), (3, 3, 3))))
        with pytest.raises(ValueError):
            snapshot(other, observable_space(world))


class TestTimeToGoal:
    def test_interpolates(self):
        series = [(0.0, 0.0), (10.0, 0.5), (20.0, 1.0)]
        assert time_to_goal(series, 0.8) == pytest.approx(16.0)

    def test_already_reached(self):
        assert time_to_goal([(2.0, 0.9), (3.0, 1.0)], 0.8) == 2.0

    def test_flat_segment(self):
        assert time_to_goal([(0.0, 0.2), (5.0, 0.5), (9.0, 0.5)], 0.5) == 5.0

    def test_not_reached(self):
        assert time_to_goal([(0.0, 0.0), (10.0, 0.5)], 0.8) is NOT_REACHED

    def test_rejects_unsorted_and_empty(self):
        with pytest.raises(ValueError):
            time_to_goal([(5.0, 0.1), (1.0, 0.9)], 0.5)
        with pytest.raises(ValueError):
            time_to_goal([], 0.5)


class TestExpectedPerformance:
    def test_linear_ramp(self):
        series = [(0.0, 0.0), (1.0, 1.0)]
        assert expected_performance(series, 0.0, 1.0) == pytest.approx(
            0.5, abs=1e-12)

    def test_subwindow(self):
        series = [(0.0, 0.0), (1.0, 1.0)]
        assert expected_performance(series, 0.5, 1.0) == pytest.approx(0.75)

    def test_piecewise(self):
        series = [(0.0, 0.0), (1.0, 1.0), (3.0, 1.0)]
        assert expected_performance(series, 0.0, 3.0) == pytest.approx(
            (0.5 + 2.0) / 3.0)

    def test_window_errors(self):
        series = [(0.0, 0.0), (1.0, 1.0)]
        with pytest.raises(ValueError):
            expected_performance(series, 0.5, 0.5)
        with pytest.raises(ValueError):
            expected_performance(series, 0.0, 2.0)


class TestTradeoff:
    def test_hand_value(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world))
        got = tradeoff_objective(rec, (1.0, 2.0, 3.0), o_safe=1,
                                 n_observable=10)
        assert got == pytest.approx(1.0 * 0.3 * 10 + 2.0 * 0.5 + 3.0)

    def test_unsafe_drops_term(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world))
        a = tradeoff_objective(rec, (1.0, 1.0, 5.0), o_safe=1)
        b = tradeoff_objective(rec, (1.0, 1.0, 5.0), o_safe=0)
        assert a - b == pytest.approx(5.0)

    def test_bad_weights(self):
        world = hand_world()
        rec = snapshot(hand_map(world), observable_space(world))
        for w in ((-1.0, 1.0, 1.0), (0.0, 0.0, 0.0)):
            with pytest.raises(ValueError):
                tradeoff_objective(rec, w, o_safe=1)
