"""Numba kernels for the ray-heavy paths (rendering, integration, gain).

All kernels walk voxels with the same Amanatides-Woo stepping and tie-break
(x before y before z) as grid.traverse_ray / grid.traverse_rays; tests assert
the equivalence. Dense arrays are indexed relative to a lower-bound voxel
index ``lo``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .grid import FREE, OCCUPIED, UNKNOWN

TOUCH_FREE = 1
TOUCH_OCC = 2


@njit(cache=True)
def _setup(o, d, nu):
    i = int(math.floor(o[0] / nu))
    j = int(math.floor(o[1] / nu))
    k = int(math.floor(o[2] / nu))
    si = 1 if d[0] > 0 else (-1 if d[0] < 0 else 0)
    sj = 1 if d[1] > 0 else (-1 if d[1] < 0 else 0)
    sk = 1 if d[2] > 0 else (-1 if d[2] < 0 else 0)
    big = 1e300
    tdx = nu / abs(d[0]) if d[0] != 0 else big
    tdy = nu / abs(d[1]) if d[1] != 0 else big
    tdz = nu / abs(d[2]) if d[2] != 0 else big
    tx = ((i + (1 if si > 0 else 0)) * nu - o[0]) / d[0] if d[0] != 0 else big
    ty = ((j + (1 if sj > 0 else 0)) * nu - o[1]) / d[1] if d[1] != 0 else big
    tz = ((k + (1 if sk > 0 else 0)) * nu - o[2]) / d[2] if d[2] != 0 else big
    return i, j, k, si, sj, sk, tdx, tdy, tdz, tx, ty, tz


@njit(cache=True)
def render_rays(o, dirs, max_len, nu, lo, occ, depth):
    """Entry distance of each ray into the first occupied voxel (inf = none).

    Voxels outside the occupancy array count as occupied (the world ends).
    """
    n = dirs.shape[0]
    nx, ny, nz = occ.shape
    for r in range(n):
        d = dirs[r]
        i, j, k, si, sj, sk, tdx, tdy, tdz, tx, ty, tz = _setup(o, d, nu)
        t_enter = 0.0
        depth[r] = math.inf
        while True:
            ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
            outside = ii < 0 or jj < 0 or kk < 0 or ii >= nx or jj >= ny or kk >= nz
            if outside or occ[ii, jj, kk]:
                depth[r] = t_enter
                break
            if tx <= ty and tx <= tz:
                t = tx
                if t >= max_len:
                    break
                i += si
                tx += tdx
            elif ty <= tz:
                t = ty
                if t >= max_len:
                    break
                j += sj
                ty += tdy
            else:
                t = tz
                if t >= max_len:
                    break
                k += sk
                tz += tdz
            t_enter = t


@njit(cache=True)
def integrate_rays(o, dirs, depth, max_range, nu, lo, touch):
    """Mark traversed voxels into the scratch ``touch`` volume: pre-hit voxels
    as free, the hit voxel as occupied (occupied wins on overlap).

    ``depth`` is the entry distance into the surface voxel, so the stepping loop
    stops right at its boundary; one extra step across that boundary recovers
    the surface voxel itself.
    """
    n = dirs.shape[0]
    nx, ny, nz = touch.shape
    eps = nu * 1e-9
    for r in range(n):
        d = dirs[r]
        hit = math.isfinite(depth[r])
        reach = depth[r] if hit else max_range
        i, j, k, si, sj, sk, tdx, tdy, tdz, tx, ty, tz = _setup(o, d, nu)
        if hit and reach <= 0.0:
            # Camera voxel itself is the surface.
            ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
            if 0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz:
                touch[ii, jj, kk] = TOUCH_OCC
            continue
        while True:
            ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
            if 0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz:
                if touch[ii, jj, kk] == 0:
                    touch[ii, jj, kk] = TOUCH_FREE
            if tx <= ty and tx <= tz:
                axis, t = 0, tx
            elif ty <= tz:
                axis, t = 1, ty
            else:
                axis, t = 2, tz
            if t >= reach - eps:
                break
            if axis == 0:
                i += si
                tx += tdx
            elif axis == 1:
                j += sj
                ty += tdy
            else:
                k += sk
                tz += tdz
        if hit:
            # Step once more across the boundary into the surface voxel.
            if axis == 0:
                i += si
            elif axis == 1:
                j += sj
            else:
                k += sk
            ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
            if 0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz:
                touch[ii, jj, kk] = TOUCH_OCC


@njit(cache=True)
def sphere_free(points, off, reach, nu, lo, m_state, sc_state, optimistic, out):
    """Sphere collision check at many points against the layered map.

    A point passes when every voxel whose center lies within ``reach`` of it is
    measured free (or, optimistically, predicted free where unmeasured).
    Voxels outside the dense arrays fail the check.
    """
    n = points.shape[0]
    m = off.shape[0]
    nx, ny, nz = m_state.shape
    r2 = reach * reach
    for q in range(n):
        px, py, pz = points[q, 0], points[q, 1], points[q, 2]
        bi = int(math.floor(px / nu))
        bj = int(math.floor(py / nu))
        bk = int(math.floor(pz / nu))
        ok = True
        for w in range(m):
            i = bi + off[w, 0]
            j = bj + off[w, 1]
            k = bk + off[w, 2]
            cx = (i + 0.5) * nu - px
            cy = (j + 0.5) * nu - py
            cz = (k + 0.5) * nu - pz
            if cx * cx + cy * cy + cz * cz > r2:
                continue
            ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
            if ii < 0 or jj < 0 or kk < 0 or ii >= nx or jj >= ny or kk >= nz:
                ok = False
                break
            ms = m_state[ii, jj, kk]
            if ms == FREE:
                continue
            if optimistic and ms == UNKNOWN and sc_state[ii, jj, kk] == FREE:
                continue
            ok = False
            break
        out[q] = ok


@njit(cache=True)
def yaw_window_gains(o, dirs, n_windows, max_len, nu, lo, m_state, sc_state, sc_l,
                     blocking, kind, stamp, stamp_base):
    """Per-yaw-window information gain with per-window voxel dedupe.

    ``dirs`` holds n_windows contiguous equal-size ray fans. ``kind`` codes:
    0 exploration, 1 sc, 2 hybrid, 3 occupied, 4 confidence. ``stamp`` is a
    reusable int64 scratch volume; entries >= stamp_base are considered marked.
    """
    per = dirs.shape[0] // n_windows
    nx, ny, nz = m_state.shape
    gains = np.zeros(n_windows)
    for w in range(n_windows):
        sid = stamp_base + w
        g = 0.0
        for rr in range(per):
            d = dirs[w * per + rr]
            i, j, k, si, sj, sk, tdx, tdy, tdz, tx, ty, tz = _setup(o, d, nu)
            while True:
                ii, jj, kk = i - lo[0], j - lo[1], k - lo[2]
                inside = 0 <= ii < nx and 0 <= jj < ny and 0 <= kk < nz
                blocked = False
                if inside:
                    m = m_state[ii, jj, kk]
                    s = sc_state[ii, jj, kk]
                    if m == OCCUPIED or (blocking and m == UNKNOWN and s == OCCUPIED):
                        blocked = True
                    if stamp[ii, jj, kk] != sid:
                        stamp[ii, jj, kk] = sid
                        in_s = m != UNKNOWN
                        in_p = (not in_s) and s != UNKNOWN
                        if kind == 0:
                            if not in_s:
                                g += 1.0
                        elif kind == 1:
                            if in_p:
                                g += 1.0
                        elif kind == 2:
                            if in_p:
                                g += 2.0
                            elif not in_s:
                                g += 1.0
                        elif kind == 3:
                            if in_p and s == OCCUPIED:
                                g += 1.0
                        else:
                            if in_p:
                                l = sc_l[ii, jj, kk]
                                if l >= 0:
                                    p = 1.0 / (1.0 + math.exp(-l))
                                else:
                                    e = math.exp(l)
                                    p = e / (1.0 + e)
                                g += abs(0.5 - p)
                if blocked:
                    break
                if tx <= ty and tx <= tz:
                    t = tx
                    if t >= max_len:
                        break
                    i += si
                    tx += tdx
                elif ty <= tz:
                    t = ty
                    if t >= max_len:
                        break
                    j += sj
                    ty += tdy
                else:
                    t = tz
                    if t >= max_len:
                        break
                    k += sk
                    tz += tdz
        gains[w] = g
    return gains
