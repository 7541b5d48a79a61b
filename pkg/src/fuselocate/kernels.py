"""Grid-traversal kernels shared by the sensor simulator and the mapper.

The hot inner loops live here: ray casting against a wall grid, counting
wall crossings along AP sightlines, splatting a scan into a log-odds map and
scoring scan-match candidates.  Each kernel exists twice, a numba ``@njit``
build and a pure-numpy lockstep build that performs the identical per-beam
arithmetic (same update formulas, same comparison order), so the two can be
swapped without changing results.

Selection happens at import time.  Set ``FUSELOCATE_DISABLE_NUMBA=1`` to
force the numpy path; ``benchmarks/bench_kernels.py`` times both.

All traversal uses the classic voxel-walking DDA: track the ray parameter t
(in units of cells) at which the next x and y grid lines are crossed and
always advance across the nearer one.  Visiting order is therefore exact,
and the reported distance for a hit is the t at which the ray *enters* the
wall cell.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but be graceful
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


NUMBA_DISABLED = os.environ.get("FUSELOCATE_DISABLE_NUMBA", "") not in ("", "0")
NUMBA_ENABLED = _HAVE_NUMBA and not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# ray casting


def _cast_rays_core(wall, gx, gy, dir_x, dir_y, max_t):
    """Scalar DDA over all beams.  Positions/distances in cell units."""
    h, w = wall.shape
    n = dir_x.shape[0]
    out = np.empty(n, np.float64)
    for b in range(n):
        dx = dir_x[b]
        dy = dir_y[b]
        ix = int(math.floor(gx))
        iy = int(math.floor(gy))
        if dx > 0.0:
            step_x = 1
            t_max_x = (ix + 1.0 - gx) / dx
            t_dx = 1.0 / dx
        elif dx < 0.0:
            step_x = -1
            t_max_x = (gx - ix) / -dx
            t_dx = 1.0 / -dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if dy > 0.0:
            step_y = 1
            t_max_y = (iy + 1.0 - gy) / dy
            t_dy = 1.0 / dy
        elif dy < 0.0:
            step_y = -1
            t_max_y = (gy - iy) / -dy
            t_dy = 1.0 / -dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf
        t = 0.0
        r = max_t
        while True:
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if wall[iy, ix] != 0:
                r = t
                break
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x = t_max_x + t_dx
                ix += step_x
            else:
                t = t_max_y
                t_max_y = t_max_y + t_dy
                iy += step_y
            if t > max_t:
                break
        out[b] = r
    return out


_cast_rays_numba = njit(cache=True)(_cast_rays_core)


def _cast_rays_numpy(wall, gx, gy, dir_x, dir_y, max_t):
    """Vectorized lockstep twin of :func:`_cast_rays_core`."""
    h, w = wall.shape
    n = dir_x.shape[0]
    ix0 = int(math.floor(gx))
    iy0 = int(math.floor(gy))
    ix = np.full(n, ix0, np.int64)
    iy = np.full(n, iy0, np.int64)
    pos_x = dir_x > 0.0
    neg_x = dir_x < 0.0
    pos_y = dir_y > 0.0
    neg_y = dir_y < 0.0
    step_x = np.where(pos_x, 1, np.where(neg_x, -1, 0)).astype(np.int64)
    step_y = np.where(pos_y, 1, np.where(neg_y, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_max_x = np.where(
            pos_x,
            (ix + 1.0 - gx) / dir_x,
            np.where(neg_x, (gx - ix) / -dir_x, np.inf),
        )
        t_max_y = np.where(
            pos_y,
            (iy + 1.0 - gy) / dir_y,
            np.where(neg_y, (gy - iy) / -dir_y, np.inf),
        )
        t_dx = np.where(pos_x | neg_x, 1.0 / np.abs(dir_x), np.inf)
        t_dy = np.where(pos_y | neg_y, 1.0 / np.abs(dir_y), np.inf)
    t = np.zeros(n)
    r = np.full(n, max_t, np.float64)
    active = np.ones(n, bool)
    while True:
        inb = active & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        active = inb
        if not active.any():
            break
        lanes = np.nonzero(active)[0]
        hit = wall[iy[lanes], ix[lanes]] != 0
        hit_lanes = lanes[hit]
        r[hit_lanes] = t[hit_lanes]
        active[hit_lanes] = False
        if not active.any():
            break
        ax = active & (t_max_x < t_max_y)
        ay = active & ~ax
        t = np.where(ax, t_max_x, np.where(ay, t_max_y, t))
        ix = np.where(ax, ix + step_x, ix)
        t_max_x = np.where(ax, t_max_x + t_dx, t_max_x)
        iy = np.where(ay, iy + step_y, iy)
        t_max_y = np.where(ay, t_max_y + t_dy, t_max_y)
        active = active & ~(t > max_t)
    return r


def cast_rays(wall, origin_x, origin_y, resolution, px, py, angles, max_range,
              use_numba=None):
    """Distances (meters) from (px, py) along world-frame angles to the first
    wall cell, capped at max_range (returned exactly when nothing is hit)."""
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    wall = np.ascontiguousarray(wall, np.uint8)
    angles = np.ascontiguousarray(angles, np.float64)
    gx = (px - origin_x) / resolution
    gy = (py - origin_y) / resolution
    dir_x = np.cos(angles)
    dir_y = np.sin(angles)
    max_t = max_range / resolution
    fn = _cast_rays_numba if use_numba else _cast_rays_numpy
    t = fn(wall, gx, gy, dir_x, dir_y, max_t)
    return t * resolution


# ---------------------------------------------------------------------------
# wall crossings along sightlines


def _wall_runs_core(wall, gx, gy, tx, ty):
    """Count maximal wall runs crossed on each segment start -> target.

    A "run" is a consecutive stretch of wall cells along the visiting order;
    a sightline punching through one solid wall counts 1 no matter how many
    cells thick it is.  Endpoint cells are included.
    """
    h, w = wall.shape
    n = tx.shape[0]
    out = np.empty(n, np.int64)
    for b in range(n):
        dxw = tx[b] - gx
        dyw = ty[b] - gy
        dist = math.sqrt(dxw * dxw + dyw * dyw)
        ix = int(math.floor(gx))
        iy = int(math.floor(gy))
        if dist == 0.0:
            out[b] = 1 if (0 <= ix < w and 0 <= iy < h and wall[iy, ix] != 0) else 0
            continue
        dx = dxw / dist
        dy = dyw / dist
        if dx > 0.0:
            step_x = 1
            t_max_x = (ix + 1.0 - gx) / dx
            t_dx = 1.0 / dx
        elif dx < 0.0:
            step_x = -1
            t_max_x = (gx - ix) / -dx
            t_dx = 1.0 / -dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if dy > 0.0:
            step_y = 1
            t_max_y = (iy + 1.0 - gy) / dy
            t_dy = 1.0 / dy
        elif dy < 0.0:
            step_y = -1
            t_max_y = (gy - iy) / -dy
            t_dy = 1.0 / -dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf
        t = 0.0
        runs = 0
        prev = False
        while True:
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            cur = wall[iy, ix] != 0
            if cur and not prev:
                runs += 1
            prev = cur
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x = t_max_x + t_dx
                ix += step_x
            else:
                t = t_max_y
                t_max_y = t_max_y + t_dy
                iy += step_y
            if t > dist:
                break
        out[b] = runs
    return out


_wall_runs_numba = njit(cache=True)(_wall_runs_core)


def _wall_runs_numpy(wall, gx, gy, tx, ty):
    """Vectorized lockstep twin of :func:`_wall_runs_core`."""
    h, w = wall.shape
    n = tx.shape[0]
    dxw = tx - gx
    dyw = ty - gy
    dist = np.sqrt(dxw * dxw + dyw * dyw)
    ix0 = int(math.floor(gx))
    iy0 = int(math.floor(gy))
    ix = np.full(n, ix0, np.int64)
    iy = np.full(n, iy0, np.int64)
    out = np.zeros(n, np.int64)
    zero = dist == 0.0
    if zero.any():
        start_wall = (0 <= ix0 < w and 0 <= iy0 < h and wall[iy0, ix0] != 0)
        out[zero] = 1 if start_wall else 0
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = np.where(zero, 0.0, dxw / np.where(zero, 1.0, dist))
        dy = np.where(zero, 0.0, dyw / np.where(zero, 1.0, dist))
        pos_x = dx > 0.0
        neg_x = dx < 0.0
        pos_y = dy > 0.0
        neg_y = dy < 0.0
        step_x = np.where(pos_x, 1, np.where(neg_x, -1, 0)).astype(np.int64)
        step_y = np.where(pos_y, 1, np.where(neg_y, -1, 0)).astype(np.int64)
        t_max_x = np.where(
            pos_x,
            (ix + 1.0 - gx) / dx,
            np.where(neg_x, (gx - ix) / -dx, np.inf),
        )
        t_max_y = np.where(
            pos_y,
            (iy + 1.0 - gy) / dy,
            np.where(neg_y, (gy - iy) / -dy, np.inf),
        )
        t_dx = np.where(pos_x | neg_x, 1.0 / np.abs(dx), np.inf)
        t_dy = np.where(pos_y | neg_y, 1.0 / np.abs(dy), np.inf)
    t = np.zeros(n)
    prev = np.zeros(n, bool)
    active = ~zero
    while True:
        inb = active & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        active = inb
        if not active.any():
            break
        lanes = np.nonzero(active)[0]
        cur = np.zeros(n, bool)
        cur[lanes] = wall[iy[lanes], ix[lanes]] != 0
        out[active & cur & ~prev] += 1
        prev = np.where(active, cur, prev)
        ax = active & (t_max_x < t_max_y)
        ay = active & ~ax
        t = np.where(ax, t_max_x, np.where(ay, t_max_y, t))
        ix = np.where(ax, ix + step_x, ix)
        t_max_x = np.where(ax, t_max_x + t_dx, t_max_x)
        iy = np.where(ay, iy + step_y, iy)
        t_max_y = np.where(ay, t_max_y + t_dy, t_max_y)
        active = active & ~(t > dist)
    return out


def count_wall_crossings(wall, origin_x, origin_y, resolution, px, py,
                         targets_xy, use_numba=None):
    """Number of distinct walls crossed between (px, py) and each target."""
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    wall = np.ascontiguousarray(wall, np.uint8)
    targets = np.asarray(targets_xy, np.float64).reshape(-1, 2)
    gx = (px - origin_x) / resolution
    gy = (py - origin_y) / resolution
    tx = np.ascontiguousarray((targets[:, 0] - origin_x) / resolution)
    ty = np.ascontiguousarray((targets[:, 1] - origin_y) / resolution)
    fn = _wall_runs_numba if use_numba else _wall_runs_numpy
    return fn(wall, gx, gy, tx, ty)


# ---------------------------------------------------------------------------
# log-odds scan splatting


def _scan_logodds_core(delta, gx, gy, dir_x, dir_y, t_end, hit, l_free, l_occ):
    """Accumulate per-beam log-odds increments into ``delta`` (cell units).

    Cells strictly before the beam endpoint get ``l_free``; the endpoint
    cell of a hit beam gets ``l_occ``.  The endpoint cell is identified by
    flooring the endpoint coordinates, and the free-space walk stops there
    (or when t passes the measured range, whichever comes first).

    All free-space adds happen before any endpoint add.  That ordering is
    part of the contract: a cell touched by both kinds of increment then
    rounds identically in this build and in the vectorized twin, which
    batches the endpoint adds at the end.
    """
    h, w = delta.shape
    n = dir_x.shape[0]
    for b in range(n):
        dx = dir_x[b]
        dy = dir_y[b]
        te = t_end[b]
        ex = int(math.floor(gx + dx * te))
        ey = int(math.floor(gy + dy * te))
        ix = int(math.floor(gx))
        iy = int(math.floor(gy))
        if dx > 0.0:
            step_x = 1
            t_max_x = (ix + 1.0 - gx) / dx
            t_dx = 1.0 / dx
        elif dx < 0.0:
            step_x = -1
            t_max_x = (gx - ix) / -dx
            t_dx = 1.0 / -dx
        else:
            step_x = 0
            t_max_x = np.inf
            t_dx = np.inf
        if dy > 0.0:
            step_y = 1
            t_max_y = (iy + 1.0 - gy) / dy
            t_dy = 1.0 / dy
        elif dy < 0.0:
            step_y = -1
            t_max_y = (gy - iy) / -dy
            t_dy = 1.0 / -dy
        else:
            step_y = 0
            t_max_y = np.inf
            t_dy = np.inf
        t = 0.0
        while True:
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if ix == ex and iy == ey:
                break
            if t > te:
                break
            delta[iy, ix] += l_free
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x = t_max_x + t_dx
                ix += step_x
            else:
                t = t_max_y
                t_max_y = t_max_y + t_dy
                iy += step_y
    for b in range(n):
        if hit[b] != 0:
            ex = int(math.floor(gx + dir_x[b] * t_end[b]))
            ey = int(math.floor(gy + dir_y[b] * t_end[b]))
            if 0 <= ex < w and 0 <= ey < h:
                delta[ey, ex] += l_occ


_scan_logodds_numba = njit(cache=True)(_scan_logodds_core)


def _scan_logodds_numpy(delta, gx, gy, dir_x, dir_y, t_end, hit, l_free, l_occ):
    """Vectorized lockstep twin of :func:`_scan_logodds_core`."""
    h, w = delta.shape
    n = dir_x.shape[0]
    ex = np.floor(gx + dir_x * t_end).astype(np.int64)
    ey = np.floor(gy + dir_y * t_end).astype(np.int64)
    ix0 = int(math.floor(gx))
    iy0 = int(math.floor(gy))
    ix = np.full(n, ix0, np.int64)
    iy = np.full(n, iy0, np.int64)
    pos_x = dir_x > 0.0
    neg_x = dir_x < 0.0
    pos_y = dir_y > 0.0
    neg_y = dir_y < 0.0
    step_x = np.where(pos_x, 1, np.where(neg_x, -1, 0)).astype(np.int64)
    step_y = np.where(pos_y, 1, np.where(neg_y, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_max_x = np.where(
            pos_x,
            (ix + 1.0 - gx) / dir_x,
            np.where(neg_x, (gx - ix) / -dir_x, np.inf),
        )
        t_max_y = np.where(
            pos_y,
            (iy + 1.0 - gy) / dir_y,
            np.where(neg_y, (gy - iy) / -dir_y, np.inf),
        )
        t_dx = np.where(pos_x | neg_x, 1.0 / np.abs(dir_x), np.inf)
        t_dy = np.where(pos_y | neg_y, 1.0 / np.abs(dir_y), np.inf)
    t = np.zeros(n)
    active = np.ones(n, bool)
    while True:
        inb = active & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        active = inb & ~((ix == ex) & (iy == ey)) & ~(t > t_end)
        if not active.any():
            break
        lanes = np.nonzero(active)[0]
        np.add.at(delta, (iy[lanes], ix[lanes]), l_free)
        ax = active & (t_max_x < t_max_y)
        ay = active & ~ax
        t = np.where(ax, t_max_x, np.where(ay, t_max_y, t))
        ix = np.where(ax, ix + step_x, ix)
        t_max_x = np.where(ax, t_max_x + t_dx, t_max_x)
        iy = np.where(ay, iy + step_y, iy)
        t_max_y = np.where(ay, t_max_y + t_dy, t_max_y)
    hits = (hit != 0) & (ex >= 0) & (ex < w) & (ey >= 0) & (ey < h)
    lanes = np.nonzero(hits)[0]
    np.add.at(delta, (ey[lanes], ex[lanes]), l_occ)


def splat_scan(delta, origin_x, origin_y, resolution, px, py, angles,
               ranges, hits, l_free, l_occ, use_numba=None):
    """Add one scan's log-odds increments to ``delta`` (same shape as grid)."""
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    angles = np.ascontiguousarray(angles, np.float64)
    gx = (px - origin_x) / resolution
    gy = (py - origin_y) / resolution
    dir_x = np.cos(angles)
    dir_y = np.sin(angles)
    t_end = np.ascontiguousarray(ranges, np.float64) / resolution
    hit8 = np.ascontiguousarray(hits, np.uint8)
    fn = _scan_logodds_numba if use_numba else _scan_logodds_numpy
    fn(delta, gx, gy, dir_x, dir_y, t_end, hit8, l_free, l_occ)


# ---------------------------------------------------------------------------
# scan-match candidate scoring


def _score_core(prob, ox, oy, res, cand_x, cand_y, cand_t, beam_ang, beam_rng):
    """Sum of map occupancy probabilities under each candidate's endpoints."""
    h, w = prob.shape
    nc = cand_x.shape[0]
    nb = beam_ang.shape[0]
    out = np.zeros(nc, np.float64)
    for c in range(nc):
        s = 0.0
        ct = cand_t[c]
        cx = cand_x[c]
        cy = cand_y[c]
        for b in range(nb):
            a = ct + beam_ang[b]
            exw = cx + beam_rng[b] * math.cos(a)
            eyw = cy + beam_rng[b] * math.sin(a)
            ix = int(math.floor((exw - ox) / res))
            iy = int(math.floor((eyw - oy) / res))
            if 0 <= ix < w and 0 <= iy < h:
                s += prob[iy, ix]
        out[c] = s
    return out


_score_numba = njit(cache=True)(_score_core)


def _score_numpy(prob, ox, oy, res, cand_x, cand_y, cand_t, beam_ang, beam_rng):
    """Broadcast twin of :func:`_score_core`.

    Summation runs in ascending beam order per candidate so ties between
    candidates resolve the same way as the scalar loop.
    """
    h, w = prob.shape
    a = cand_t[:, None] + beam_ang[None, :]
    exw = cand_x[:, None] + beam_rng[None, :] * np.cos(a)
    eyw = cand_y[:, None] + beam_rng[None, :] * np.sin(a)
    ix = np.floor((exw - ox) / res).astype(np.int64)
    iy = np.floor((eyw - oy) / res).astype(np.int64)
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    vals = np.where(valid, prob[iy.clip(0, h - 1), ix.clip(0, w - 1)], 0.0)
    out = np.zeros(cand_x.shape[0], np.float64)
    for b in range(vals.shape[1]):
        out += vals[:, b]
    return out


def score_pose_candidates(prob, origin_x, origin_y, resolution, cand_xyt,
                          beam_angles, beam_ranges, use_numba=None):
    """Score each candidate pose (x, y, theta) against the probability map."""
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    cand = np.asarray(cand_xyt, np.float64).reshape(-1, 3)
    fn = _score_numba if use_numba else _score_numpy
    return fn(
        np.ascontiguousarray(prob, np.float64),
        origin_x,
        origin_y,
        resolution,
        np.ascontiguousarray(cand[:, 0]),
        np.ascontiguousarray(cand[:, 1]),
        np.ascontiguousarray(cand[:, 2]),
        np.ascontiguousarray(beam_angles, np.float64),
        np.ascontiguousarray(beam_ranges, np.float64),
    )


def warm_up():
    """Trigger JIT compilation of every kernel on toy inputs."""
    wall = np.zeros((4, 4), np.uint8)
    wall[3, :] = 1
    cast_rays(wall, 0.0, 0.0, 1.0, 1.5, 1.5, np.array([0.3, 2.0]), 5.0)
    count_wall_crossings(wall, 0.0, 0.0, 1.0, 1.5, 1.5, [[1.5, 3.5]])
    delta = np.zeros((4, 4))
    splat_scan(delta, 0.0, 0.0, 1.0, 1.5, 1.5, np.array([1.2]), np.array([2.0]),
               np.array([True]), -0.4, 0.85)
    score_pose_candidates(delta, 0.0, 0.0, 1.0, [[1.5, 1.5, 0.1]],
                          np.array([0.0]), np.array([1.0]))
