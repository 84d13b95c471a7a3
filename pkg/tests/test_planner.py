"""Planner tests: information formulations, yaw optimization, edge costs,
subtree utility, tree bookkeeping, and selection."""

import math

import numpy as np
import pytest

from conftest import empty_map

from voxplore.fusion import ScLayer, log_odds
from voxplore.grid import FREE, OCCUPIED, UNKNOWN, GridConfig, Pose
from voxplore.hierarchy import MultiLayerMap, TraversalMode
from voxplore.measured import LAMBDA_FREE, LAMBDA_OCC, MeasuredLayer
from voxplore.planner import (GainKind, NbvPlanner, PlannerConfig, PlannerNode,
                              RaycastMode, ViewTree, edge_cost, optimize_yaw,
                              ramp_time, visible_voxels, voxel_information)
from voxplore.sensor import SensorModel

CFG = GridConfig(voxel_size=0.08)


def _set_sc(mlmap, idx, l):
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    mlmap.sc.grid.write("log_odds", idx, l, op="set")
    mlmap.sc.grid.write("touched", idx, True, op="set")
    mlmap.sc.version += 1


class TestVoxelInformation:
    def test_contribution_table(self):
        m = empty_map()
        # measured free, measured occupied, predicted occupied, predicted free,
        # predicted uncertain-free at p = 0.3, and a blank voxel
        m.measured._apply(np.array([[0, 0, 0]]), LAMBDA_FREE)
        m.measured._apply(np.array([[0, 0, 1]]), LAMBDA_OCC)
        _set_sc(m, [[0, 0, 2], [0, 0, 3], [0, 0, 4]],
                [2.0, -2.0, log_odds(0.3)])
        idx = [[0, 0, k] for k in range(6)]
        expect = {
            GainKind.EXPLORATION: [0, 0, 1, 1, 1, 1],
            GainKind.SC: [0, 0, 1, 1, 1, 0],
            GainKind.HYBRID: [0, 0, 2, 2, 2, 1],
            GainKind.OCCUPIED: [0, 0, 1, 0, 0, 0],
            GainKind.CONFIDENCE: [0, 0, pytest.approx(probabilify(2.0)),
                                  pytest.approx(probabilify(-2.0)), 0.2, 0],
        }
        for kind, want in expect.items():
            got = voxel_information(idx, kind, m)
            assert list(got) == pytest.approx(want), kind


def probabilify(l):
    """|0.5 - p| for a log-odds value."""
    return abs(0.5 - 1.0 / (1.0 + math.exp(-l)))


class TestEdgeCost:
    CFG_INF = PlannerConfig(a_max=math.inf)

    def test_translation_time(self):
        a, b = Pose(0, 0, 0), Pose(2, 0, 0)
        assert edge_cost(a, b, self.CFG_INF) == pytest.approx(2.0)

    def test_yaw_time_dominates(self):
        a, b = Pose(0, 0, 0, 0.0), Pose(0, 0, 0, math.pi / 2)
        assert edge_cost(a, b, self.CFG_INF) == pytest.approx(1.0)

    def test_max_of_both(self):
        a, b = Pose(0, 0, 0, 0.0), Pose(0.1, 0, 0, math.pi / 2)
        assert edge_cost(a, b, self.CFG_INF) == pytest.approx(1.0)

    def test_trapezoid_long(self):
        # reaches v_max: t = d / v + v / a
        assert ramp_time(1.0, 1.0, 1.0) == pytest.approx(2.0)

    def test_trapezoid_short(self):
        # never reaches v_max: t = 2 sqrt(d / a)
        assert ramp_time(0.25, 1.0, 1.0) == pytest.approx(1.0)

    def test_zero_distance(self):
        assert ramp_time(0.0, 1.0, 2.0) == 0.0

    def test_symmetry(self):
        cfg = PlannerConfig()
        a, b = Pose(0.3, 1.0, 0.2, 0.5), Pose(1.1, -0.2, 0.9, -2.0)
        assert edge_cost(a, b, cfg) == pytest.approx(edge_cost(b, a, cfg))


class TestUtility:
    def test_hand_example(self):
        tree = ViewTree(Pose(0, 0, 0))
        a = tree.add(PlannerNode(pose=Pose(1, 0, 0), gain=4.0, cost=2.0, parent=0))
        b = tree.add(PlannerNode(pose=Pose(2, 0, 0), gain=0.0, cost=1.0, parent=a))
        # ratios: A = 4/2 = 2, B = 4/3
        r = tree.path_ratios()
        assert r[a] == pytest.approx(2.0)
        assert r[b] == pytest.approx(4.0 / 3.0)
        assert tree.utility(a) == pytest.approx(2.0)  # subtree max
        assert tree.utility(b) == pytest.approx(4.0 / 3.0)
        assert tree.utility(tree.root) == pytest.approx(2.0)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            n = int(rng.integers(2, 40))
            tree = ViewTree(Pose(0, 0, 0))
            for i in range(1, n):
                parent = int(rng.integers(0, i))
                tree.add(PlannerNode(pose=Pose(*rng.uniform(0, 5, 3)),
                                     gain=float(rng.uniform(0, 10)),
                                     cost=float(rng.uniform(0.1, 5)),
                                     parent=parent))

            def path_ratio(i):
                g = c = 0.0
                while i != tree.root:
                    g += tree.nodes[i].gain
                    c += tree.nodes[i].cost
                    i = tree.nodes[i].parent
                return g / c

            for i in range(n):
                want = max((path_ratio(j) for j in tree.subtree(i)
                            if j != tree.root), default=-math.inf)
                assert tree.utility(i) == pytest.approx(want)


class TestYawOptimization:
    def _directional_map(self):
        # free everywhere around the origin column, unknown kept only toward +x
        m = empty_map(bounds=((-40, -40, -10), (40, 40, 20)))
        idx = np.array([[i, j, k] for i in range(-30, 5) for j in range(-30, 31)
                        for k in range(-5, 15)])
        m.measured._apply(idx, LAMBDA_FREE)
        return m

    def test_faces_the_unknown(self):
        m = self._directional_map()
        sensor = SensorModel(max_range=2.0)
        cfg = PlannerConfig(yaw_samples=8, gain_rays_w=24, gain_rays_h=16)
        yaw, gain = optimize_yaw((0.2, 0.2, 0.2), m, sensor,
                                 GainKind.EXPLORATION, cfg)
        assert abs(yaw) < 1e-9  # +x
        assert gain > 0

    def test_tie_picks_smallest_yaw(self):
        # a range shorter than the voxel keeps every fan inside one voxel, so
        # all yaw gains are exactly 1 and the tie-break decides
        m = empty_map()
        sensor = SensorModel(max_range=0.01)
        cfg = PlannerConfig(yaw_samples=4, gain_rays_w=16, gain_rays_h=12)
        yaw, gain = optimize_yaw((0.52, 0.52, 0.52), m, sensor,
                                 GainKind.EXPLORATION, cfg)
        assert yaw == pytest.approx(-math.pi)
        assert gain == 1.0

    def test_gain_equals_visible_information_sum(self):
        m = self._directional_map()
        sensor = SensorModel(max_range=2.0)
        cfg = PlannerConfig(yaw_samples=8, gain_rays_w=24, gain_rays_h=16)
        pos = (0.2, 0.2, 0.2)
        yaw, gain = optimize_yaw(pos, m, sensor, GainKind.EXPLORATION, cfg)
        vis = visible_voxels(Pose(*pos, yaw), m, sensor, cfg.raycast_mode,
                             rays_w=cfg.gain_rays_w, rays_h=cfg.gain_rays_h)
        want = float(np.sum(voxel_information(vis, GainKind.EXPLORATION, m)))
        assert gain == pytest.approx(want)

    def test_dense_kernel_matches_reference(self):
        rng = np.random.default_rng(23)
        # bounds wide enough that no gain ray can leave them: outside voxels
        # would be clipped by the bounded map but counted by the sparse one
        dense = empty_map(bounds=((-40, -40, -40), (80, 80, 80)))
        sparse = MultiLayerMap(MeasuredLayer(CFG), ScLayer(CFG))
        for layer_pair, lam, n in (((dense, sparse), LAMBDA_FREE, 6000),
                                   ((dense, sparse), LAMBDA_OCC, 300)):
            idx = rng.integers((0, 0, 0), (40, 40, 24), size=(n, 3))
            for m in layer_pair:
                m.measured._apply(idx, lam)
        sc_idx = rng.integers((0, 0, 0), (40, 40, 24), size=(3000, 3))
        sc_l = rng.choice([-2.0, 2.0], size=3000)
        for m in (dense, sparse):
            _set_sc(m, sc_idx, sc_l)
        sensor = SensorModel(max_range=2.5)
        for kind in GainKind:
            for mode in RaycastMode:
                cfg = PlannerConfig(yaw_samples=6, gain_rays_w=20,
                                    gain_rays_h=14, raycast_mode=mode)
                for pos in ((1.0, 1.0, 1.0), (2.0, 1.7, 0.9)):
                    ya, ga = optimize_yaw(pos, dense, sensor, kind, cfg)
                    yb, gb = optimize_yaw(pos, sparse, sensor, kind, cfg)
                    assert ya == pytest.approx(yb), (kind, mode)
                    assert ga == pytest.approx(gb), (kind, mode)


class TestVisibleVoxels:
    def test_blocking_subset_of_nonblocking(self):
        rng = np.random.default_rng(29)
        for trial in range(5):
            m = empty_map(bounds=((0, 0, 0), (30, 30, 30)))
            m.measured._apply(rng.integers(0, 30, size=(2000, 3)), LAMBDA_FREE)
            m.measured._apply(rng.integers(0, 30, size=(100, 3)), LAMBDA_OCC)
            _set_sc(m, rng.integers(0, 30, size=(500, 3)),
                    rng.choice([-2.0, 2.0], size=500))
            pose = Pose(*rng.uniform(0.5, 1.9, 3), rng.uniform(-3, 3))
            sensor = SensorModel(max_range=2.0)
            nb = visible_voxels(pose, m, sensor, RaycastMode.NON_BLOCKING,
                                rays_w=24, rays_h=18)
            bl = visible_voxels(pose, m, sensor, RaycastMode.BLOCKING,
                                rays_w=24, rays_h=18)
            nb_set = {tuple(v) for v in nb}
            bl_set = {tuple(v) for v in bl}
            assert bl_set <= nb_set

    def test_measured_occupied_terminates(self):
        m = empty_map()
        wall = np.array([[10, j, k] for j in range(-20, 21) for k in range(-20, 21)])
        m.measured._apply(wall, LAMBDA_OCC)
        pose = Pose(0.2, 0.04, 0.04, 0.0)
        sensor = SensorModel(h_fov_deg=20.0, v_fov_deg=15.0, max_range=4.0)
        vis = visible_voxels(pose, m, sensor, RaycastMode.NON_BLOCKING,
                             rays_w=8, rays_h=6)
        assert vis[:, 0].max() == 10  # nothing beyond the wall


class TestTreeMechanics:
    def _planner(self, seed=0):
        m = empty_map(bounds=((-20, -20, -20), (60, 60, 60)))
        # a big free box so expansion has room
        idx = np.array([[i, j, k] for i in range(-10, 50) for j in range(-10, 50)
                        for k in range(-10, 25)])
        m.measured._apply(idx, LAMBDA_FREE)
        cfg = PlannerConfig(sampling_radius=1.0, max_edge_length=0.8,
                            yaw_samples=4, gain_rays_w=8, gain_rays_h=6,
                            max_nodes=60)
        rng = np.random.default_rng(seed)
        pl = NbvPlanner(m, SensorModel(max_range=1.5), cfg,
                        GainKind.EXPLORATION, rng)
        pl.reset(Pose(1.2, 1.2, 0.6))
        return pl

    def test_consistency_after_expansion(self):
        pl = self._planner()
        for _ in range(150):
            pl.expand()
        tree = pl.tree
        assert 2 <= len(tree) <= pl.cfg.max_nodes
        for i, n in enumerate(tree.nodes):
            if i == tree.root:
                assert n.parent is None and n.cost == 0.0
                continue
            assert tree.nodes[n.parent].children.count(i) == 1
            assert n.cost == pytest.approx(
                edge_cost(tree.nodes[n.parent].pose, n.pose, pl.cfg))
            assert np.linalg.norm(n.pose.position -
                                  tree.nodes[n.parent].pose.position) \
                <= pl.cfg.max_edge_length + 1e-9
            # walking up always reaches the root (no cycles)
            seen, j = set(), i
            while j is not None:
                assert j not in seen
                seen.add(j)
                j = tree.nodes[j].parent
            assert tree.root in seen

    def test_expansion_is_seed_deterministic(self):
        a, b = self._planner(seed=5), self._planner(seed=5)
        for pl in (a, b):
            for _ in range(60):
                pl.expand()
        pa = [(n.pose.x, n.pose.y, n.pose.z, n.pose.yaw) for n in a.tree.nodes]
        pb = [(n.pose.x, n.pose.y, n.pose.z, n.pose.yaw) for n in b.tree.nodes]
        assert pa == pb

    def test_rewiring_adopts_cheaper_parent(self):
        pl = self._planner()
        tree = pl.tree
        root_pose = tree.nodes[tree.root].pose
        # a deliberately expensive dog-leg to B, then a node near both
        a = tree.add(PlannerNode(
            pose=Pose(root_pose.x, root_pose.y + 0.7, root_pose.z, 0.0),
            gain=1.0, cost=edge_cost(root_pose, Pose(root_pose.x,
                                                     root_pose.y + 0.7,
                                                     root_pose.z), pl.cfg),
            parent=tree.root, map_version=pl.map.version))
        b_pose = Pose(root_pose.x + 0.1, root_pose.y, root_pose.z, 0.0)
        b = tree.add(PlannerNode(
            pose=b_pose, gain=1.0,
            cost=edge_cost(tree.nodes[a].pose, b_pose, pl.cfg),
            parent=a, map_version=pl.map.version))
        pl.rewire_around(b)
        # the direct root connection is much cheaper than the dog-leg
        assert tree.nodes[b].parent == tree.root
        _, c = tree.path_sums()
        assert c[b] == pytest.approx(edge_cost(root_pose, b_pose, pl.cfg))

    def test_selection_returns_first_node_and_reroots(self):
        pl = self._planner()
        tree = pl.tree
        root_pose = tree.nodes[tree.root].pose
        p1 = Pose(root_pose.x + 0.5, root_pose.y, root_pose.z, 0.0)
        p2 = Pose(root_pose.x + 1.0, root_pose.y, root_pose.z, 0.0)
        a = tree.add(PlannerNode(pose=p1, gain=1.0,
                                 cost=edge_cost(root_pose, p1, pl.cfg),
                                 parent=tree.root, map_version=pl.map.version))
        tree.add(PlannerNode(pose=p2, gain=50.0,
                             cost=edge_cost(p1, p2, pl.cfg),
                             parent=a, map_version=pl.map.version))
        target = pl.select_and_execute()
        # the best path runs through a; a is the executed first node
        assert (target.x, target.y, target.z) == (p1.x, p1.y, p1.z)
        assert pl.tree.nodes[pl.tree.root].pose is target
        assert pl.tree.nodes[pl.tree.root].gain == 0.0

    def test_selection_none_when_no_gain(self):
        pl = self._planner()
        tree = pl.tree
        root_pose = tree.nodes[tree.root].pose
        p1 = Pose(root_pose.x + 0.5, root_pose.y, root_pose.z, 0.0)
        tree.add(PlannerNode(pose=p1, gain=0.0,
                             cost=edge_cost(root_pose, p1, pl.cfg),
                             parent=tree.root, map_version=pl.map.version))
        assert pl.select_and_execute() is None
        assert pl.zero_utility_streak == 1
        assert not pl.stuck

    def test_utility_scale_invariance(self):
        # argmax of the ratio is invariant to uniform gain scaling
        rng = np.random.default_rng(31)
        tree = ViewTree(Pose(0, 0, 0))
        for i in range(1, 30):
            tree.add(PlannerNode(pose=Pose(*rng.uniform(0, 5, 3)),
                                 gain=float(rng.uniform(0, 10)),
                                 cost=float(rng.uniform(0.1, 5)),
                                 parent=int(rng.integers(0, i))))
        base = np.argmax(tree.path_ratios())
        for n in tree.nodes:
            n.gain *= 37.5
        assert np.argmax(tree.path_ratios()) == base
