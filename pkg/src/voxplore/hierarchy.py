"""Hierarchical two-layer map: measured states take precedence, scene-completion
fills in behind a symmetric confidence cut-off."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._kernels import sphere_free
from .fusion import ScLayer, probability
from .grid import FREE, OCCUPIED, UNKNOWN, GridConfig
from .measured import MeasuredLayer


class Source(Enum):
    MEASURED = "measured"
    PREDICTED = "predicted"
    UNKNOWN = "unknown"


class TraversalMode(Enum):
    CONSERVATIVE = "conservative"
    OPTIMISTIC = "optimistic"


# Gain-relevant voxel classes: measured set, predicted-not-measured set, neither.
IN_S = 1
IN_P = 2
NEITHER = 0


def confidence_cutoffs(tau_c: float):
    """Log-odds thresholds (l_o, l_f) for a confidence threshold in [0, 1].

    tau_c = 0 means occupied iff p >= 0.5; tau_c = 1 saturates to (+inf, -inf)
    so only certainty qualifies.
    """
    if not 0.0 <= tau_c <= 1.0:
        raise ValueError("tau_c must be in [0, 1]")
    if tau_c == 1.0:
        return math.inf, -math.inf
    l_o = math.log((1.0 + tau_c) / (1.0 - tau_c))
    return l_o, -l_o


@dataclass
class LookupResult:
    state: int
    source: Source


class MultiLayerMap:
    """Read-only composite over the measured and SC layers."""

    def __init__(self, measured: MeasuredLayer, sc: ScLayer, tau_c: float = 0.0,
                 collision_radius: float = 0.35):
        if measured.cfg != sc.cfg:
            raise ValueError("layers must share one grid config")
        self.measured = measured
        self.sc = sc
        self.cfg = measured.cfg
        self.collision_radius = collision_radius
        self.set_tau_c(tau_c)
        self._sphere_offsets = {}
        self._dense_cache = None
        self._stamp = None
        self._stamp_counter = 0

    def set_tau_c(self, tau_c: float):
        self.tau_c = tau_c
        self.l_o, self.l_f = confidence_cutoffs(tau_c)

    @property
    def version(self):
        return (self.measured.version, self.sc.version)

    # -- state queries -------------------------------------------------------

    def sc_state(self, idx) -> np.ndarray:
        """Ternary SC-layer state at the current cut-offs (UNKNOWN if untouched
        or the evidence lies strictly between the cut-offs)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        l = self.sc.log_odds_at(idx)
        touched = self.sc.touched_at(idx)
        out = np.full(idx.shape[0], UNKNOWN, dtype=np.uint8)
        # occupied assigned last so an exact tie at tau_c = 0 (l = 0,
        # p = 0.5) resolves to occupied, matching the cut-off definition
        out[touched & (l <= self.l_f)] = FREE
        out[touched & (l >= self.l_o)] = OCCUPIED
        return out

    def states(self, idx):
        """(state, source_code) arrays; source codes: 0 unknown, 1 measured, 2 predicted."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        m = self.measured.state(idx)
        out = m.copy()
        src = np.where(m != UNKNOWN, 1, 0).astype(np.uint8)
        fill = m == UNKNOWN
        if np.any(fill):
            s = self.sc_state(idx[fill])
            out[fill] = s
            src[fill] = np.where(s != UNKNOWN, 2, 0)
        return out, src

    def lookup(self, idx) -> LookupResult:
        """Hierarchical lookup of a single voxel."""
        st, src = self.states(np.asarray(idx).reshape(1, 3))
        source = {0: Source.UNKNOWN, 1: Source.MEASURED, 2: Source.PREDICTED}[int(src[0])]
        return LookupResult(int(st[0]), source)

    def state_volume(self):
        """Dense (state, source_code) over the layer bounds (bounded layers only)."""
        m = self.measured.state_volume()
        l = self.sc.grid.dense("log_odds")
        touched = self.sc.grid.dense("touched")
        sc = np.full(m.shape, UNKNOWN, dtype=np.uint8)
        sc[touched & (l <= self.l_f)] = FREE
        sc[touched & (l >= self.l_o)] = OCCUPIED
        out = np.where(m != UNKNOWN, m, sc)
        src = np.where(m != UNKNOWN, 1, np.where(sc != UNKNOWN, 2, 0)).astype(np.uint8)
        return out, src

    def classify_for_gain(self, idx) -> np.ndarray:
        """IN_S for measured voxels, IN_P for predicted-not-measured, else NEITHER."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        m = self.measured.state(idx)
        out = np.full(idx.shape[0], NEITHER, dtype=np.uint8)
        out[m != UNKNOWN] = IN_S
        rest = m == UNKNOWN
        if np.any(rest):
            s = self.sc_state(idx[rest])
            sub = out[rest]
            sub[s != UNKNOWN] = IN_P
            out[rest] = sub
        return out

    @property
    def bounded(self) -> bool:
        return self.measured.grid.bounds is not None

    def dense_cache(self):
        """Dense per-voxel arrays for the fast ray kernels, cached per map
        version: (measured_state, sc_state, sc_log_odds, lo). Bounded only."""
        key = (self.version, self.tau_c)
        if self._dense_cache is not None and self._dense_cache[0] == key:
            return self._dense_cache[1]
        lo, _ = self.measured.grid.bounds
        m = self.measured.state_volume()
        l = np.ascontiguousarray(self.sc.grid.dense("log_odds"))
        touched = self.sc.grid.dense("touched")
        sc = np.full(m.shape, UNKNOWN, dtype=np.uint8)
        sc[touched & (l <= self.l_f)] = FREE
        sc[touched & (l >= self.l_o)] = OCCUPIED
        payload = (np.ascontiguousarray(m), sc, l, lo.astype(np.int64))
        self._dense_cache = (key, payload)
        return payload

    def stamp_scratch(self, n: int):
        """Reserve ``n`` fresh stamp ids in the reusable dedupe volume; returns
        (stamp_volume, first_id)."""
        lo, hi = self.measured.grid.bounds
        shape = tuple((hi - lo).tolist())
        if self._stamp is None or self._stamp.shape != shape:
            self._stamp = np.zeros(shape, dtype=np.int64)
            self._stamp_counter = 0
        base = self._stamp_counter + 1
        self._stamp_counter += n
        return self._stamp, base

    # -- traversability ------------------------------------------------------

    def _offsets(self, radius: float) -> np.ndarray:
        key = round(radius, 9)
        cached = self._sphere_offsets.get(key)
        if cached is not None:
            return cached
        nu = self.cfg.voxel_size
        # Conservative sphere-voxel test: center distance <= r + (sqrt(3)/2) * voxel.
        reach = radius + math.sqrt(3.0) / 2.0 * nu
        r = int(math.ceil(reach / nu))
        rng = np.arange(-r, r + 1)
        off = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        keep = np.linalg.norm(off, axis=1) * nu <= reach + nu  # coarse prefilter
        off = off[keep]
        self._sphere_offsets[key] = (off, reach)
        return off, reach

    def is_traversable(self, p, mode: TraversalMode, radius: float | None = None) -> bool:
        return bool(self.traversable_mask(np.asarray(p, dtype=np.float64).reshape(1, 3),
                                          mode, radius)[0])

    def traversable_mask(self, points, mode: TraversalMode, radius: float | None = None):
        """Vectorized sphere collision check at many points, shape (N, 3)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        radius = self.collision_radius if radius is None else radius
        if radius <= 0:
            raise ValueError("collision radius must be positive")
        off, reach = self._offsets(radius)
        nu = self.cfg.voxel_size
        if self.bounded:
            m_state, sc_state, _, lo = self.dense_cache()
            out = np.zeros(points.shape[0], dtype=np.bool_)
            sphere_free(np.ascontiguousarray(points), off, reach, nu, lo,
                        m_state, sc_state, mode is TraversalMode.OPTIMISTIC, out)
            return out
        base = np.floor(points / nu).astype(np.int64)
        idx = (base[:, None, :] + off[None, :, :])
        centers = (idx + 0.5) * nu
        within = np.linalg.norm(centers - points[:, None, :], axis=2) <= reach
        flat = idx.reshape(-1, 3)
        st, src = self.states(flat)
        if mode is TraversalMode.CONSERVATIVE:
            ok = (st == FREE) & (src == 1)
        else:
            ok = st == FREE
        ok = ok.reshape(points.shape[0], -1)
        return np.all(ok | ~within, axis=1)

    # -- snapshot export -----------------------------------------------------

    def export_snapshot(self, path):
        """Write per-voxel records (index, measured state, sc log-odds) as text.

        Only voxels known to either layer are written. Format per line:
        ``i j k <measured_state> <sc_log_odds>`` with a one-line header.
        """
        if self.measured.grid.bounds is None:
            raise ValueError("snapshot export needs bounded layers")
        lo, _ = self.measured.grid.bounds
        m = self.measured.state_volume()
        l = self.sc.grid.dense("log_odds")
        touched = self.sc.grid.dense("touched")
        keep = (m != UNKNOWN) | touched
        ii, jj, kk = np.nonzero(keep)
        with open(path, "w") as f:
            f.write(f"# voxplore-map-snapshot v1 voxel_size={self.cfg.voxel_size!r} "
                    f"tau_c={self.tau_c!r}\n")
            for a, b, c in zip(ii, jj, kk):
                lv = float(l[a, b, c]) if touched[a, b, c] else math.nan
                f.write(f"{a + lo[0]} {b + lo[1]} {c + lo[2]} {int(m[a, b, c])} {lv!r}\n")


def load_snapshot(path):
    """Read a snapshot back as (indices, measured_states, sc_log_odds, tau_c)."""
    idx, states, lods = [], [], []
    tau_c = 0.0
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("tau_c="):
                        tau_c = float(tok[6:])
                continue
            i, j, k, s, l = line.split()
            idx.append((int(i), int(j), int(k)))
            states.append(int(s))
            lods.append(float(l))
    return (np.array(idx, dtype=np.int64).reshape(-1, 3),
            np.array(states, dtype=np.uint8), np.array(lods), tau_c)
