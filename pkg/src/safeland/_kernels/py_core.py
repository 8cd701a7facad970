"""Pure-numpy implementations of the hot kernels.

This module is the reference semantics for the compiled extension
(``safeland._kernels._core``). Both backends must produce bit-identical
results, so every formula here is written in a fixed evaluation order that
the C code mirrors: marches accumulate ``t += dt`` per lane, disc scans
iterate offsets in the same row-major order, and the Kalman update reads
its operands before writing. Keep the two files in sync expression by
expression when editing.

Shapes and dtypes are fixed by the callers (float64 grids, int32 offset
tables); the kernels do no validation beyond what the algorithms need.
"""

import numpy as np

BACKEND_NAME = "python"


# ---------------------------------------------------------------------------
# terrain sampling


def _rock_tree(fields):
    # KD-tree over rock centers, cached on the fields object. Rocks do not
    # overlap, so at most one disc covers a query point; the tree only has
    # to find it (k=8 guards hand-built fields with mixed radii).
    tree = getattr(fields, "_rock_tree_cache", None)
    if tree is None:
        from scipy.spatial import cKDTree

        tree = cKDTree(fields.rocks[:, :2])
        fields._rock_tree_cache = tree
    return tree


def terrain_heights(fields, xs, ys):
    """Sample the analytic surface at the given world coordinates.

    Returns float64 heights; points outside the extent are NaN.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h = fields.slope_tan * xs

    inside = (xs >= 0.0) & (xs <= fields.extent_x) & (ys >= 0.0) & (ys <= fields.extent_y)

    if fields.fractal is not None:
        ng = fields.fractal.shape[0]
        gx = xs * fields.fractal_inv_cell
        gy = ys * fields.fractal_inv_cell
        ix = np.clip(np.floor(gx).astype(np.int64), 0, ng - 2)
        iy = np.clip(np.floor(gy).astype(np.int64), 0, ng - 2)
        fx = gx - ix
        fy = gy - iy
        g = fields.fractal
        h00 = g[iy, ix]
        h01 = g[iy, ix + 1]
        h10 = g[iy + 1, ix]
        h11 = g[iy + 1, ix + 1]
        h = h + ((h00 * (1.0 - fx) + h01 * fx) * (1.0 - fy) + (h10 * (1.0 - fx) + h11 * fx) * fy)

    nrocks = fields.rocks.shape[0]
    if nrocks > 0:
        k = min(8, nrocks)
        dist, idx = _rock_tree(fields).query(
            np.column_stack((xs.ravel(), ys.ravel())),
            k=k,
            distance_upper_bound=fields.rock_r_max + 1e-9,
        )
        if k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        cap = np.zeros(xs.size, dtype=np.float64)
        flat_x = xs.ravel()
        flat_y = ys.ravel()
        for col in range(k):
            cand = idx[:, col]
            valid = cand < nrocks
            if not np.any(valid):
                break
            sel = np.flatnonzero(valid & (cap == 0.0))
            if sel.size == 0:
                continue
            rocks = fields.rocks[cand[sel]]
            ddx = flat_x[sel] - rocks[:, 0]
            ddy = flat_y[sel] - rocks[:, 1]
            d2 = ddx * ddx + ddy * ddy
            rr = rocks[:, 2] * rocks[:, 2]
            covered = d2 <= rr
            if np.any(covered):
                target = sel[covered]
                cap[target] = np.sqrt(rr[covered] - d2[covered])
        h = h + cap.reshape(xs.shape)

    if np.isfinite(fields.cliff_x):
        h = np.where(xs > fields.cliff_x, h - fields.cliff_drop, h)

    return np.where(inside, h, np.nan)


# ---------------------------------------------------------------------------
# ray casting


def raycast(fields, cam, dirs, t0, dt, t_max, n_bisect):
    """March rays onto the surface; returns per-ray hit parameter (NaN = miss).

    Rays are parameterised P(t) = cam + t * dir. The march starts at t0,
    advances by dt until the ray drops below the surface, leaves the extent
    or exceeds t_max, then bisects the bracketing interval a fixed number
    of times. Rays whose start sample is outside the extent or already
    below the surface are invalid.
    """
    cx, cy, cz = float(cam[0]), float(cam[1]), float(cam[2])
    dx = dirs[:, 0]
    dy = dirs[:, 1]
    dz = dirs[:, 2]
    n = dirs.shape[0]
    ex = fields.extent_x
    ey = fields.extent_y

    t_lo = t0.copy()
    x = cx + t_lo * dx
    y = cy + t_lo * dy
    alive = (x >= 0.0) & (x <= ex) & (y >= 0.0) & (y <= ey)
    f = np.full(n, -1.0)
    sel = np.flatnonzero(alive)
    if sel.size:
        f[sel] = (cz + t_lo[sel] * dz[sel]) - terrain_heights(fields, x[sel], y[sel])
    alive &= f > 0.0

    hit = np.zeros(n, dtype=bool)
    t_hi = np.zeros(n, dtype=np.float64)
    while np.any(alive):
        t_next = t_lo + dt
        x2 = cx + t_next * dx
        y2 = cy + t_next * dy
        exited = alive & (
            (x2 < 0.0) | (x2 > ex) | (y2 < 0.0) | (y2 > ey) | (t_next > t_max)
        )
        alive &= ~exited
        sel = np.flatnonzero(alive)
        if sel.size == 0:
            break
        f2 = np.full(n, 1.0)
        f2[sel] = (cz + t_next[sel] * dz[sel]) - terrain_heights(fields, x2[sel], y2[sel])
        crossed = alive & (f2 <= 0.0)
        hit |= crossed
        t_hi = np.where(crossed, t_next, t_hi)
        alive &= ~crossed
        t_lo = np.where(alive, t_next, t_lo)

    t_out = np.full(n, np.nan)
    sel = np.flatnonzero(hit)
    if sel.size:
        lo = t_lo[sel]
        hi = t_hi[sel]
        sdx = dx[sel]
        sdy = dy[sel]
        sdz = dz[sel]
        for _ in range(n_bisect):
            tm = 0.5 * (lo + hi)
            fm = (cz + tm * sdz) - terrain_heights(fields, cx + tm * sdx, cy + tm * sdy)
            go_low = fm <= 0.0
            hi = np.where(go_low, tm, hi)
            lo = np.where(go_low, lo, tm)
        t_out[sel] = 0.5 * (lo + hi)
    return t_out


# ---------------------------------------------------------------------------
# pyramid fusion


def fuse_points(
    value,
    variance,
    obs,
    last,
    offs,
    ns,
    roll_r,
    roll_c,
    depth,
    xs,
    ys,
    zs,
    vs,
    z_a,
    fp_scale,
    res_f,
    origin_x,
    origin_y,
    extent_cells,
    timestamp,
):
    """Fuse one batch of measurements into the pyramid, coarse to fine.

    Points are processed strictly in array order. Storage arrays are the
    map's flat per-field buffers; (offs, ns, roll_r, roll_c) describe each
    layer's slice, side length and rolling offsets. Returns int64 stats:
    [updates layer 1..d, nan-rejects, out-of-map rejects, footprint rejects].
    """
    stats = np.zeros(depth + 3, dtype=np.int64)
    npts = xs.shape[0]
    inv_res = 1.0 / res_f
    for i in range(npts):
        x = xs[i]
        y = ys[i]
        z = zs[i]
        v = vs[i]
        if not (x == x and y == y and z == z) or v <= 0.0:
            stats[depth] += 1
            continue
        height_diff = z_a - z
        if height_diff <= 0.0:
            stats[depth + 2] += 1
            continue
        cf = int(np.floor((x - origin_x) * inv_res))
        rf = int(np.floor((y - origin_y) * inv_res))
        if cf < 0 or cf >= extent_cells or rf < 0 or rf >= extent_cells:
            stats[depth + 1] += 1
            continue
        footprint = height_diff * fp_scale
        target = depth
        size = res_f
        while target > 1 and size < footprint:
            size *= 2.0
            target -= 1
        recon = 0.0
        for level in range(1, target + 1):
            shift = depth - level
            nl = ns[level - 1]
            pr = (rf >> shift) + roll_r[level - 1]
            if pr >= nl:
                pr -= nl
            pc = (cf >> shift) + roll_c[level - 1]
            if pc >= nl:
                pc -= nl
            idx = offs[level - 1] + pr * nl + pc
            m = z - recon
            if obs[idx] == 0:
                value[idx] = m
                variance[idx] = v
            else:
                pv = variance[idx]
                denom = pv + v
                value[idx] = (value[idx] * v + m * pv) / denom
                variance[idx] = pv * v / denom
            if obs[idx] < 65535:
                obs[idx] += 1
            last[idx] = timestamp
            recon += value[idx]
            stats[level - 1] += 1
    return stats


# ---------------------------------------------------------------------------
# landing detector stages


def plane_fit_grid(heights, observed, offsets, res):
    """Least-squares plane per grid cell over a disc of offsets.

    heights: (n, n) float64; observed: (n, n) uint8; offsets: (k, 2) int32
    (drow, dcol) in fixed row-major order; res: cell size in meters.
    Returns (a, b, c, count, ok): plane z = a*dx + b*dy + c in coordinates
    relative to each cell's center, support count, and a solvability mask
    (count >= 3 and non-singular normal equations).
    """
    n0, n1 = heights.shape
    cnt = np.zeros((n0, n1), dtype=np.float64)
    sx = np.zeros_like(cnt)
    sy = np.zeros_like(cnt)
    sxx = np.zeros_like(cnt)
    sxy = np.zeros_like(cnt)
    syy = np.zeros_like(cnt)
    sz = np.zeros_like(cnt)
    sxz = np.zeros_like(cnt)
    syz = np.zeros_like(cnt)

    for k in range(offsets.shape[0]):
        dr = int(offsets[k, 0])
        dc = int(offsets[k, 1])
        px = dc * res
        py = dr * res
        src_r = slice(max(0, dr), min(n0, n0 + dr))
        dst_r = slice(max(0, -dr), min(n0, n0 - dr))
        src_c = slice(max(0, dc), min(n1, n1 + dc))
        dst_c = slice(max(0, -dc), min(n1, n1 - dc))
        w = observed[src_r, src_c].astype(np.float64)
        zv = np.where(observed[src_r, src_c] != 0, heights[src_r, src_c], 0.0)
        cnt[dst_r, dst_c] += w
        sx[dst_r, dst_c] += w * px
        sy[dst_r, dst_c] += w * py
        sxx[dst_r, dst_c] += w * (px * px)
        sxy[dst_r, dst_c] += w * (px * py)
        syy[dst_r, dst_c] += w * (py * py)
        sz[dst_r, dst_c] += zv
        sxz[dst_r, dst_c] += zv * px
        syz[dst_r, dst_c] += zv * py

    det = (
        sxx * (syy * cnt - sy * sy)
        - sxy * (sxy * cnt - sy * sx)
        + sx * (sxy * sy - syy * sx)
    )
    ok = (cnt >= 3.0) & (np.abs(det) > 1e-12)
    safe_det = np.where(ok, det, 1.0)
    a = (
        sxz * (syy * cnt - sy * sy)
        - sxy * (syz * cnt - sy * sz)
        + sx * (syz * sy - syy * sz)
    ) / safe_det
    b = (
        sxx * (syz * cnt - sy * sz)
        - sxz * (sxy * cnt - sy * sx)
        + sx * (sxy * sz - syz * sx)
    ) / safe_det
    c = (
        sxx * (syy * sz - syz * sy)
        - sxy * (sxy * sz - syz * sx)
        + sxz * (sxy * sy - syy * sx)
    ) / safe_det
    a = np.where(ok, a, 0.0)
    b = np.where(ok, b, 0.0)
    c = np.where(ok, c, 0.0)
    return a, b, c, cnt, ok


def disc_max_exceeds(deviation, offsets, threshold, candidates):
    """Disc maximum of a deviation grid, thresholded, masked to candidates.

    deviation uses -inf for cells that must not contribute. Cells outside
    the grid never contribute. Returns a uint8 hazard mask; a maximum
    exactly at the threshold counts as exceeded (conservative boundary).
    """
    n0, n1 = deviation.shape
    best = np.full((n0, n1), -np.inf)
    for k in range(offsets.shape[0]):
        dr = int(offsets[k, 0])
        dc = int(offsets[k, 1])
        src_r = slice(max(0, dr), min(n0, n0 + dr))
        dst_r = slice(max(0, -dr), min(n0, n0 - dr))
        src_c = slice(max(0, dc), min(n1, n1 + dc))
        dst_c = slice(max(0, -dc), min(n1, n1 - dc))
        np.maximum(
            best[dst_r, dst_c], deviation[src_r, src_c], out=best[dst_r, dst_c]
        )
    hazard = (best >= threshold) & (candidates != 0)
    return hazard.astype(np.uint8)
