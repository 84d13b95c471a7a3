"""Sampling-based next-best-view planner: tree expansion with rewiring,
ray-cast information gains, yaw optimization, and velocity-ramp edge costs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._kernels import yaw_window_gains
from .fusion import probability
from .grid import FREE, OCCUPIED, UNKNOWN, Pose, normalize_angle, traverse_rays
from .hierarchy import IN_P, IN_S, MultiLayerMap, TraversalMode
from .sensor import SensorModel


class GainKind(Enum):
    EXPLORATION = "exploration"
    SC = "sc"
    HYBRID = "hybrid"
    OCCUPIED = "occupied"
    CONFIDENCE = "confidence"


class RaycastMode(Enum):
    BLOCKING = "blocking"
    NON_BLOCKING = "nonblocking"


@dataclass
class PlannerConfig:
    sampling_radius: float = 2.0
    max_edge_length: float = 1.5
    yaw_samples: int = 8
    gain_rays_w: int = 64
    gain_rays_h: int = 48
    raycast_mode: RaycastMode = RaycastMode.NON_BLOCKING
    collision_mode: TraversalMode = TraversalMode.CONSERVATIVE
    collision_radius: float = 0.35
    v_max: float = 1.0
    yaw_rate_max: float = math.radians(90.0)
    a_max: float = 2.0
    max_nodes: int = 400
    stuck_steps: int = 40
    expansions_per_step: int = 10
    frontier_bias: float = 0.3  # fraction of samples steered at frontier voxels

    def __post_init__(self):
        for name in ("sampling_radius", "max_edge_length", "yaw_samples", "gain_rays_w",
                     "gain_rays_h", "collision_radius", "v_max", "yaw_rate_max",
                     "max_nodes", "stuck_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class PlannerNode:
    pose: Pose
    gain: float = 0.0
    cost: float = 0.0          # edge cost from parent, seconds; 0 for root
    parent: int | None = None
    children: list = field(default_factory=list)
    map_version: tuple = (-1, -1)


# -- information -------------------------------------------------------------


def voxel_information(idx, kind: GainKind, mlmap: MultiLayerMap) -> np.ndarray:
    """Per-voxel information contribution, vectorized over (N, 3) indices."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    cls = mlmap.classify_for_gain(idx)
    in_s = cls == IN_S
    in_p = cls == IN_P
    if kind is GainKind.EXPLORATION:
        return (~in_s).astype(np.float64)
    if kind is GainKind.SC:
        return in_p.astype(np.float64)
    if kind is GainKind.HYBRID:
        return np.where(in_p, 2.0, np.where(in_s, 0.0, 1.0))
    if kind is GainKind.OCCUPIED:
        out = np.zeros(idx.shape[0])
        if np.any(in_p):
            out[in_p] = (mlmap.sc_state(idx[in_p]) == OCCUPIED).astype(np.float64)
        return out
    if kind is GainKind.CONFIDENCE:
        out = np.zeros(idx.shape[0])
        if np.any(in_p):
            p = probability(mlmap.sc.log_odds_at(idx[in_p]))
            out[in_p] = np.abs(0.5 - p)
        return out
    raise ValueError(f"unknown gain kind {kind}")


def _blocked_fn(mlmap: MultiLayerMap, mode: RaycastMode):
    def blocked(idx):
        m = mlmap.measured.state(idx)
        hit = m == OCCUPIED
        if mode is RaycastMode.BLOCKING:
            # measured state wins: only measured-unknown voxels consult the
            # prediction layer
            rest = m == UNKNOWN
            if np.any(rest):
                hit = hit.copy()
                hit[rest] = mlmap.sc_state(idx[rest]) == OCCUPIED
        return hit
    return blocked


def visible_voxels(pose: Pose, mlmap: MultiLayerMap, sensor: SensorModel,
                   mode: RaycastMode, rays_w: int = 64, rays_h: int = 48):
    """Set of voxels visible from a pose via forward-simulated sensor rays.

    Rays always stop at the first measured-occupied voxel; in blocking mode
    they additionally stop at predicted-occupied voxels. The terminating voxel
    is included. Returns unique indices, shape (N, 3).
    """
    dirs = sensor.ray_directions(pose.yaw, width=rays_w, height=rays_h)
    voxels, valid = traverse_rays(pose.position, dirs, sensor.max_range, mlmap.cfg,
                                  blocked_fn=_blocked_fn(mlmap, mode))
    flat = voxels[valid]
    flat = _clip_to_bounds(flat, mlmap)
    return np.unique(flat, axis=0)


def _clip_to_bounds(idx, mlmap: MultiLayerMap):
    """Drop voxels outside a bounded map's stored region; they carry no state."""
    bounds = mlmap.measured.grid.bounds
    if bounds is None or idx.shape[0] == 0:
        return idx
    lo, hi = bounds
    keep = np.all((idx >= lo) & (idx < hi), axis=1)
    return idx[keep]


_DIRS_CACHE: dict = {}


def _gain_dirs(sensor: SensorModel, cfg: PlannerConfig):
    """Cached (yaws, concatenated ray fan) for the yaw-candidate sweep."""
    key = (sensor, cfg.yaw_samples, cfg.gain_rays_w, cfg.gain_rays_h)
    hit = _DIRS_CACHE.get(key)
    if hit is None:
        yaws = np.sort([normalize_angle(2.0 * math.pi * i / cfg.yaw_samples)
                        for i in range(cfg.yaw_samples)])
        dirs = np.ascontiguousarray(np.concatenate([
            sensor.ray_directions(y, width=cfg.gain_rays_w, height=cfg.gain_rays_h)
            for y in yaws]))
        hit = (yaws, dirs)
        _DIRS_CACHE[key] = hit
    return hit


def optimize_yaw(position, mlmap: MultiLayerMap, sensor: SensorModel, kind: GainKind,
                 cfg: PlannerConfig):
    """Best yaw and its gain over uniformly sampled yaw candidates.

    The gain of a yaw is the summed voxel information over its visible set
    (each voxel counted once); ties pick the smallest yaw.
    """
    p = np.asarray(position, dtype=np.float64)
    yaws, all_dirs = _gain_dirs(sensor, cfg)
    if mlmap.bounded:
        gains = _yaw_gains_fast(p, all_dirs, len(yaws), mlmap, sensor, kind, cfg)
    else:
        gains = _yaw_gains_reference(p, all_dirs, len(yaws), mlmap, sensor, kind, cfg)
    best_yaw, best_gain = yaws[0], -1.0
    for y, g in zip(yaws, gains):
        if g > best_gain:  # strict: earlier (smaller) yaw wins ties
            best_yaw, best_gain = float(y), float(g)
    return best_yaw, best_gain


_KIND_CODE = {GainKind.EXPLORATION: 0, GainKind.SC: 1, GainKind.HYBRID: 2,
              GainKind.OCCUPIED: 3, GainKind.CONFIDENCE: 4}


def _yaw_gains_fast(p, all_dirs, n_yaws, mlmap, sensor, kind, cfg):
    m_state, sc_state, sc_l, lo = mlmap.dense_cache()
    stamp, base = mlmap.stamp_scratch(n_yaws)
    return yaw_window_gains(p, all_dirs, n_yaws, float(sensor.max_range),
                            float(mlmap.cfg.voxel_size), lo, m_state, sc_state,
                            sc_l, cfg.raycast_mode is RaycastMode.BLOCKING,
                            _KIND_CODE[kind], stamp, base)


def _yaw_gains_reference(p, all_dirs, n_yaws, mlmap, sensor, kind, cfg):
    voxels, valid = traverse_rays(p, all_dirs, sensor.max_range, mlmap.cfg,
                                  blocked_fn=_blocked_fn(mlmap, cfg.raycast_mode))
    per_yaw = all_dirs.shape[0] // n_yaws
    gains = np.zeros(n_yaws)
    for i in range(n_yaws):
        sl = slice(i * per_yaw, (i + 1) * per_yaw)
        flat = _clip_to_bounds(voxels[sl][valid[sl]], mlmap)
        if flat.shape[0]:
            uniq = np.unique(flat, axis=0)
            gains[i] = float(np.sum(voxel_information(uniq, kind, mlmap)))
    return gains


# -- costs and utility -------------------------------------------------------


def edge_cost(a: Pose, b: Pose, cfg: PlannerConfig) -> float:
    """Segment traversal time: max of trapezoidal translation time and yaw time."""
    d = float(np.linalg.norm(b.position - a.position))
    t_trans = ramp_time(d, cfg.v_max, cfg.a_max)
    dyaw = abs(normalize_angle(b.yaw - a.yaw))
    t_yaw = dyaw / cfg.yaw_rate_max
    return max(t_trans, t_yaw)


def ramp_time(d: float, v_max: float, a_max: float) -> float:
    """Time to cover distance d under a trapezoidal velocity profile."""
    if d <= 0:
        return 0.0
    if not math.isfinite(a_max):
        return d / v_max
    if d * a_max >= v_max * v_max:
        return d / v_max + v_max / a_max
    return 2.0 * math.sqrt(d / a_max)


class ViewTree:
    """The planner's view tree; node 0 is always the current root."""

    def __init__(self, root_pose: Pose):
        self.nodes: list[PlannerNode] = [PlannerNode(pose=root_pose)]
        self.root = 0

    def __len__(self):
        return len(self.nodes)

    def add(self, node: PlannerNode) -> int:
        nid = len(self.nodes)
        self.nodes.append(node)
        self.nodes[node.parent].children.append(nid)
        return nid

    def path_sums(self):
        """Cumulative (gain, cost) from root to every node, root excluded from sums."""
        n = len(self.nodes)
        g = np.zeros(n)
        c = np.zeros(n)
        stack = [self.root]
        while stack:
            i = stack.pop()
            node = self.nodes[i]
            if node.parent is not None:
                g[i] = g[node.parent] + node.gain
                c[i] = c[node.parent] + node.cost
            stack.extend(node.children)
        return g, c

    def path_ratios(self):
        g, c = self.path_sums()
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(c > 0, g / np.maximum(c, 1e-300), -np.inf)
        r[self.root] = -np.inf
        return r

    def utility(self, i: int) -> float:
        """Max root-path gain/cost ratio over the subtree of node i."""
        r = self.path_ratios()
        best = -math.inf
        stack = [i]
        while stack:
            j = stack.pop()
            if j != self.root:
                best = max(best, r[j])
            stack.extend(self.nodes[j].children)
        return best

    def subtree(self, i: int):
        out = []
        stack = [i]
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(self.nodes[j].children)
        return out


class NbvPlanner:
    """Owns the view tree and the expansion / selection cycle."""

    def __init__(self, mlmap: MultiLayerMap, sensor: SensorModel, cfg: PlannerConfig,
                 kind: GainKind, rng: np.random.Generator, bounds_m=None):
        self.map = mlmap
        self.sensor = sensor
        self.cfg = cfg
        self.kind = kind
        self.rng = rng
        self.bounds_m = bounds_m  # ((x0,y0,z0), (x1,y1,z1)) sampling limits, meters
        self.tree: ViewTree | None = None
        self.zero_utility_streak = 0
        self._frontier_cache = None

    def reset(self, root_pose: Pose):
        self.tree = ViewTree(root_pose)

    # -- expansion -----------------------------------------------------------

    def _segment_free(self, a, b) -> bool:
        d = np.asarray(b) - np.asarray(a)
        length = float(np.linalg.norm(d))
        step = self.map.cfg.voxel_size / 2.0
        n = max(int(math.ceil(length / step)), 1)
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = np.asarray(a)[None, :] + ts[:, None] * d[None, :]
        return bool(np.all(self.map.traversable_mask(
            pts, self.cfg.collision_mode, self.cfg.collision_radius)))

    def _frontier_positions(self):
        """Centers of frontier voxels (measured free, 6-adjacent to unknown),
        cached per map version. Bounded maps only; else None."""
        if not self.map.bounded:
            return None
        if self._frontier_cache is not None and \
                self._frontier_cache[0] == self.map.measured.version:
            return self._frontier_cache[1]
        m_state, _, _, lo = self.map.dense_cache()
        free = m_state == FREE
        unk = m_state == UNKNOWN
        near_unk = np.zeros_like(unk)
        near_unk[1:] |= unk[:-1]
        near_unk[:-1] |= unk[1:]
        near_unk[:, 1:] |= unk[:, :-1]
        near_unk[:, :-1] |= unk[:, 1:]
        near_unk[:, :, 1:] |= unk[:, :, :-1]
        near_unk[:, :, :-1] |= unk[:, :, 1:]
        idx = np.argwhere(free & near_unk)
        pts = (idx + lo + 0.5) * self.map.cfg.voxel_size
        self._frontier_cache = (self.map.measured.version, pts)
        return pts

    def expand(self) -> bool:
        """One expansion attempt; returns True if a node was added.

        Most samples grow the tree uniformly around random anchor nodes; a
        configurable fraction instead steers from the nearest node toward a
        random frontier voxel, which is what gets the tree through doorways
        and other narrow measured-free passages."""
        tree = self.tree
        frontier = None
        if self.rng.random() < self.cfg.frontier_bias:
            frontier = self._frontier_positions()
            if frontier is not None and frontier.shape[0] == 0:
                frontier = None
        if frontier is not None:
            target = frontier[int(self.rng.integers(frontier.shape[0]))]
            pos_all = np.array([n.pose.position for n in tree.nodes])
            dists = np.linalg.norm(pos_all - target, axis=1)
            anchor_id = int(np.argmin(dists))
            anchor = tree.nodes[anchor_id]
            vec = target - anchor.pose.position
            norm = np.linalg.norm(vec)
            if norm == 0:
                return False
            pos = anchor.pose.position + vec / norm * min(norm, self.cfg.max_edge_length)
        else:
            anchor_id = int(self.rng.integers(len(tree.nodes)))
            anchor = tree.nodes[anchor_id]
            # Uniform direction, radius biased toward the shell for spread.
            vec = self.rng.normal(size=3)
            norm = np.linalg.norm(vec)
            if norm == 0:
                return False
            radius = self.cfg.sampling_radius * self.rng.random() ** (1.0 / 3.0)
            pos = anchor.pose.position + vec / norm * min(radius, self.cfg.max_edge_length)
        if self.bounds_m is not None:
            lo, hi = self.bounds_m
            if np.any(pos < lo) or np.any(pos > hi):
                return False
        if not self._segment_free(anchor.pose.position, pos):
            return False
        yaw, gain = optimize_yaw(pos, self.map, self.sensor, self.kind, self.cfg)
        pose = Pose(pos[0], pos[1], pos[2], yaw)
        cost = edge_cost(anchor.pose, pose, self.cfg)
        if cost <= 0:
            return False
        nid = tree.add(PlannerNode(pose=pose, gain=gain, cost=cost, parent=anchor_id,
                                   map_version=self.map.version))
        self.rewire_around(nid)
        self._prune_if_needed()
        return True

    def rewire_around(self, nid: int):
        """RRT*-style rewiring on root-path cost: adopt the cheapest reachable
        parent for ``nid``, then offer ``nid`` as a parent to neighbors it makes
        cheaper to reach. Keeping paths taut is what makes the Eq. 12 ratio
        meaningful — gain should not be bought with meandering path cost."""
        tree = self.tree
        _, c = tree.path_sums()
        node = tree.nodes[nid]
        sub = set(tree.subtree(nid))
        pos = np.array([n.pose.position for n in tree.nodes])
        near = np.flatnonzero(np.linalg.norm(pos - node.pose.position, axis=1)
                              <= self.cfg.max_edge_length)
        best_parent, best_cost = node.parent, c[nid]
        for j in near:
            j = int(j)
            other = tree.nodes[j]
            if j == nid or j in sub:
                continue
            ec = edge_cost(other.pose, node.pose, self.cfg)
            if ec <= 0:
                continue
            if c[j] + ec < best_cost - 1e-12 and self._segment_free(
                    other.pose.position, node.pose.position):
                best_parent, best_cost = j, c[j] + ec
        if best_parent != node.parent:
            self._reparent(nid, best_parent)
            _, c = tree.path_sums()
        # Offer the new node as a parent to its neighbors. Ancestors of the new
        # node must be skipped: adopting one would create a parent cycle.
        ancestors = set()
        i = node.parent
        while i is not None:
            ancestors.add(i)
            i = tree.nodes[i].parent
        for j in near:
            j = int(j)
            other = tree.nodes[j]
            if (j == nid or j == tree.root or j in sub or j in ancestors
                    or other.parent is None):
                continue
            ec = edge_cost(node.pose, other.pose, self.cfg)
            if ec <= 0:
                continue
            if c[nid] + ec < c[j] - 1e-12 and self._segment_free(
                    node.pose.position, other.pose.position):
                self._reparent(j, nid)
                _, c = tree.path_sums()

    def _reparent(self, nid: int, new_parent: int):
        tree = self.tree
        node = tree.nodes[nid]
        tree.nodes[node.parent].children.remove(nid)
        node.parent = new_parent
        node.cost = edge_cost(tree.nodes[new_parent].pose, node.pose, self.cfg)
        tree.nodes[new_parent].children.append(nid)

    def _prune_if_needed(self):
        tree = self.tree
        while len(tree.nodes) > self.cfg.max_nodes:
            r = tree.path_ratios()
            leaves = [i for i, n in enumerate(tree.nodes)
                      if not n.children and i != tree.root]
            if not leaves:
                return
            zero = [i for i in leaves if tree.nodes[i].gain <= 0]
            pool = zero if zero else sorted(leaves, key=lambda i: (r[i], i))[:1]
            victim = int(pool[int(self.rng.integers(len(pool)))])
            self._remove_leaf(victim)

    def _remove_leaf(self, victim: int):
        tree = self.tree
        tree.nodes[tree.nodes[victim].parent].children.remove(victim)
        last = len(tree.nodes) - 1
        if victim != last:
            # Move the last node into the vacated slot to keep ids compact.
            moved = tree.nodes[last]
            tree.nodes[victim] = moved
            tree.nodes[moved.parent].children.remove(last)
            tree.nodes[moved.parent].children.append(victim)
            for ch in moved.children:
                tree.nodes[ch].parent = victim
            if tree.root == last:
                tree.root = victim
        tree.nodes.pop()

    # -- gain refresh and selection ------------------------------------------

    def refresh_stale_gains(self, near_pose: Pose, budget: int = 16,
                            radius: float | None = None):
        """Recompute gains of stale nodes near the robot, nearest first,
        bounded by ``budget`` recomputations.

        Selection only lazily re-evaluates nodes on the winning path, which
        corrects stale over-estimates but never stale under-estimates: a node
        whose view was worthless when inserted (for the SC gains, an area no
        prediction had reached yet) would otherwise keep its zero forever and
        be first in line for pruning. ``radius`` defaults to sensor range."""
        tree = self.tree
        version = self.map.version
        if radius is None:
            radius = self.sensor.max_range
        stale = [(float(np.linalg.norm(n.pose.position - near_pose.position)), i)
                 for i, n in enumerate(tree.nodes)
                 if i != tree.root and n.map_version != version]
        stale = [(d, i) for d, i in stale if d <= radius]
        stale.sort()
        for _, i in stale[:budget]:
            self._refresh_node(i)

    def _refresh_node(self, i: int):
        node = self.tree.nodes[i]
        yaw, gain = optimize_yaw(node.pose.position, self.map, self.sensor,
                                 self.kind, self.cfg)
        node.pose = Pose(node.pose.x, node.pose.y, node.pose.z, yaw)
        node.gain = gain
        node.map_version = self.map.version

    def select_and_execute(self, refresh_rounds: int = 50):
        """Pick the first node of the best path, re-root there, and return its pose.

        Before committing, stale gains along the winning path are recomputed and
        the choice re-evaluated, so the executed path never rests on gain values
        from an outdated map. Returns None (and bumps the stuck counter) when no
        node has positive utility.
        """
        tree = self.tree
        if len(tree.nodes) < 2:
            self.zero_utility_streak += 1
            return None
        version = self.map.version
        for _ in range(refresh_rounds):
            r = tree.path_ratios()
            best = int(np.argmax(r))
            if not np.isfinite(r[best]) or r[best] <= 0:
                break
            stale = [i for i in self._root_path(best)
                     if tree.nodes[i].map_version != version]
            if not stale:
                break
            for i in stale:
                self._refresh_node(i)
        r = tree.path_ratios()
        best = int(np.argmax(r))
        if not np.isfinite(r[best]) or r[best] <= 0:
            self.zero_utility_streak += 1
            return None
        self.zero_utility_streak = 0
        # Walk up to the root child on the best path.
        first = best
        while tree.nodes[first].parent != tree.root:
            first = tree.nodes[first].parent
        self._reroot(first)
        return tree.nodes[tree.root].pose

    def _root_path(self, i: int):
        """Node ids from the root (exclusive) down to node i."""
        path = []
        while i is not None and i != self.tree.root:
            path.append(i)
            i = self.tree.nodes[i].parent
        return path[::-1]

    @property
    def best_utility(self) -> float:
        if self.tree is None or len(self.tree.nodes) < 2:
            return 0.0
        r = self.tree.path_ratios()
        v = float(np.max(r))
        return v if math.isfinite(v) else 0.0

    @property
    def stuck(self) -> bool:
        return self.zero_utility_streak >= self.cfg.stuck_steps

    def _reroot(self, new_root: int):
        """Reverse parent links along the root path; edge costs are symmetric."""
        tree = self.tree
        path = []
        i = new_root
        while i is not None:
            path.append(i)
            i = tree.nodes[i].parent
        for child, parent in zip(path, path[1:]):
            tree.nodes[parent].children.remove(child)
            tree.nodes[child].children.append(parent)
            tree.nodes[parent].parent = child
            tree.nodes[parent].cost = edge_cost(tree.nodes[child].pose,
                                                tree.nodes[parent].pose, self.cfg)
        root = tree.nodes[new_root]
        root.parent = None
        root.cost = 0.0
        root.gain = 0.0  # the robot is about to measure from here
        tree.root = new_root
