# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
# cython: cdivision=True
"""Compiled implementations of the hot kernels.

Semantics twin of ``py_core``: every formula is written in the same
evaluation order so results are bit-identical to the numpy fallback
(the extension is compiled with -ffp-contract=off to keep it that way).
Edit the two files together.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double NAN = float("nan")


# ---------------------------------------------------------------------------
# terrain sampling

cdef inline double _surface_height(
    double x,
    double y,
    double slope_tan,
    bint has_fractal,
    const double[:, ::1] fract,
    double inv_cell,
    Py_ssize_t ng,
    const double[:, ::1] rocks,
    Py_ssize_t nrocks,
    double bin_size,
    Py_ssize_t nbx,
    Py_ssize_t nby,
    const cnp.int32_t[::1] bin_start,
    const cnp.int32_t[::1] bin_items,
    double cliff_x,
    double cliff_drop,
) noexcept nogil:
    cdef double h = slope_tan * x
    cdef double gx, gy, fx, fy, h00, h01, h10, h11
    cdef double ddx, ddy, d2, rr
    cdef Py_ssize_t ix, iy, bx, by, bi, bj, s, e, k, ri
    cdef bint found
    if has_fractal:
        gx = x * inv_cell
        gy = y * inv_cell
        ix = <Py_ssize_t>floor(gx)
        iy = <Py_ssize_t>floor(gy)
        if ix < 0:
            ix = 0
        if ix > ng - 2:
            ix = ng - 2
        if iy < 0:
            iy = 0
        if iy > ng - 2:
            iy = ng - 2
        fx = gx - ix
        fy = gy - iy
        h00 = fract[iy, ix]
        h01 = fract[iy, ix + 1]
        h10 = fract[iy + 1, ix]
        h11 = fract[iy + 1, ix + 1]
        h = h + ((h00 * (1.0 - fx) + h01 * fx) * (1.0 - fy) + (h10 * (1.0 - fx) + h11 * fx) * fy)
    if nrocks > 0:
        bx = <Py_ssize_t>(x / bin_size)
        if bx > nbx - 1:
            bx = nbx - 1
        if bx < 0:
            bx = 0
        by = <Py_ssize_t>(y / bin_size)
        if by > nby - 1:
            by = nby - 1
        if by < 0:
            by = 0
        found = False
        for bj in range(by - 1 if by > 0 else 0, by + 2 if by + 2 < nby else nby):
            for bi in range(bx - 1 if bx > 0 else 0, bx + 2 if bx + 2 < nbx else nbx):
                s = bin_start[bj * nbx + bi]
                e = bin_start[bj * nbx + bi + 1]
                for k in range(s, e):
                    ri = bin_items[k]
                    ddx = x - rocks[ri, 0]
                    ddy = y - rocks[ri, 1]
                    d2 = ddx * ddx + ddy * ddy
                    rr = rocks[ri, 2] * rocks[ri, 2]
                    if d2 <= rr:
                        h = h + sqrt(rr - d2)
                        found = True
                        break
                if found:
                    break
            if found:
                break
    if x > cliff_x:
        h = h - cliff_drop
    return h


cdef class _Fields:
    """C-side unpack of a TerrainFields object."""

    cdef double slope_tan, extent_x, extent_y, inv_cell
    cdef double bin_size, cliff_x, cliff_drop
    cdef bint has_fractal
    cdef Py_ssize_t ng, nrocks, nbx, nby
    cdef double[:, ::1] fract
    cdef double[:, ::1] rocks
    cdef cnp.int32_t[::1] bin_start
    cdef cnp.int32_t[::1] bin_items

    def __init__(self, fields):
        self.slope_tan = fields.slope_tan
        self.extent_x = fields.extent_x
        self.extent_y = fields.extent_y
        self.has_fractal = fields.fractal is not None
        if self.has_fractal:
            self.fract = fields.fractal
            self.ng = fields.fractal.shape[0]
            self.inv_cell = fields.fractal_inv_cell
        else:
            self.fract = np.zeros((2, 2))
            self.ng = 2
            self.inv_cell = 0.0
        self.rocks = fields.rocks
        self.nrocks = fields.rocks.shape[0]
        self.bin_size = fields.bin_size
        self.nbx = fields.bin_nx
        self.nby = fields.bin_ny
        self.bin_start = fields.bin_start
        self.bin_items = fields.bin_items
        self.cliff_x = fields.cliff_x
        self.cliff_drop = fields.cliff_drop

    cdef inline double height(self, double x, double y) noexcept nogil:
        return _surface_height(
            x, y, self.slope_tan,
            self.has_fractal, self.fract, self.inv_cell, self.ng,
            self.rocks, self.nrocks,
            self.bin_size, self.nbx, self.nby, self.bin_start, self.bin_items,
            self.cliff_x, self.cliff_drop,
        )


def terrain_heights(fields, xs, ys):
    """Sample the analytic surface; NaN outside the extent."""
    xs_arr = np.ascontiguousarray(xs, dtype=np.float64)
    ys_arr = np.ascontiguousarray(ys, dtype=np.float64)
    shape = xs_arr.shape
    cdef double[::1] xv = xs_arr.reshape(-1)
    cdef double[::1] yv = ys_arr.reshape(-1)
    cdef Py_ssize_t n = xv.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef _Fields f = _Fields(fields)
    cdef Py_ssize_t i
    cdef double x, y
    with nogil:
        for i in range(n):
            x = xv[i]
            y = yv[i]
            if x >= 0.0 and x <= f.extent_x and y >= 0.0 and y <= f.extent_y:
                out[i] = f.height(x, y)
            else:
                out[i] = NAN
    return out_arr.reshape(shape)


# ---------------------------------------------------------------------------
# ray casting

def raycast(fields, cam, dirs, t0, dt, t_max, n_bisect):
    """March rays onto the surface; per-ray hit parameter, NaN for a miss."""
    dirs_arr = np.ascontiguousarray(dirs, dtype=np.float64)
    t0_arr = np.ascontiguousarray(t0, dtype=np.float64)
    dt_arr = np.ascontiguousarray(dt, dtype=np.float64)
    tm_arr = np.ascontiguousarray(t_max, dtype=np.float64)
    cdef double[:, ::1] dv = dirs_arr
    cdef double[::1] t0v = t0_arr
    cdef double[::1] dtv = dt_arr
    cdef double[::1] tmv = tm_arr
    cdef Py_ssize_t n = dv.shape[0]
    out_arr = np.full(n, NAN)
    cdef double[::1] out = out_arr
    cdef _Fields f = _Fields(fields)
    cdef double cx = cam[0], cy = cam[1], cz = cam[2]
    cdef double ex = f.extent_x, ey = f.extent_y
    cdef Py_ssize_t i, b, nb = n_bisect
    cdef double dx, dy, dz, step, lim, t, t2, x, y, fv, f2, tm, fm
    cdef bint hit
    with nogil:
        for i in range(n):
            dx = dv[i, 0]
            dy = dv[i, 1]
            dz = dv[i, 2]
            step = dtv[i]
            lim = tmv[i]
            t = t0v[i]
            x = cx + t * dx
            y = cy + t * dy
            if x < 0.0 or x > ex or y < 0.0 or y > ey:
                continue
            fv = (cz + t * dz) - f.height(x, y)
            if not (fv > 0.0):
                continue
            hit = False
            while True:
                t2 = t + step
                x = cx + t2 * dx
                y = cy + t2 * dy
                if x < 0.0 or x > ex or y < 0.0 or y > ey or t2 > lim:
                    break
                f2 = (cz + t2 * dz) - f.height(x, y)
                if f2 <= 0.0:
                    hit = True
                    break
                t = t2
            if not hit:
                continue
            for b in range(nb):
                tm = 0.5 * (t + t2)
                fm = (cz + tm * dz) - f.height(cx + tm * dx, cy + tm * dy)
                if fm <= 0.0:
                    t2 = tm
                else:
                    t = tm
            out[i] = 0.5 * (t + t2)
    return out_arr


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
    """Sequential coarse-to-fine Kalman fusion; see py_core.fuse_points."""
    cdef double[::1] val = value
    cdef double[::1] var = variance
    cdef cnp.uint16_t[::1] ob = obs
    cdef cnp.float32_t[::1] la = last
    cdef cnp.int64_t[::1] off_v = offs
    cdef cnp.int64_t[::1] ns_v = ns
    cdef cnp.int64_t[::1] rr_v = roll_r
    cdef cnp.int64_t[::1] rc_v = roll_c
    cdef double[::1] xv = xs
    cdef double[::1] yv = ys
    cdef double[::1] zv = zs
    cdef double[::1] vv = vs
    cdef Py_ssize_t d = depth
    cdef double za = z_a, scale = fp_scale, res0 = res_f
    cdef double ox = origin_x, oy = origin_y
    cdef Py_ssize_t n_cells = extent_cells
    cdef float ts = <float>timestamp
    stats_arr = np.zeros(d + 3, dtype=np.int64)
    cdef cnp.int64_t[::1] stats = stats_arr
    cdef Py_ssize_t npts = xv.shape[0]
    cdef Py_ssize_t i, cf, rf, target, level, shift, nl, pr, pc, idx
    cdef double x, y, z, v, height_diff, footprint, size, recon, m, pv, denom, inv_res
    inv_res = 1.0 / res0
    with nogil:
        for i in range(npts):
            x = xv[i]
            y = yv[i]
            z = zv[i]
            v = vv[i]
            if not (x == x and y == y and z == z) or v <= 0.0:
                stats[d] += 1
                continue
            height_diff = za - z
            if height_diff <= 0.0:
                stats[d + 2] += 1
                continue
            cf = <Py_ssize_t>floor((x - ox) * inv_res)
            rf = <Py_ssize_t>floor((y - oy) * inv_res)
            if cf < 0 or cf >= n_cells or rf < 0 or rf >= n_cells:
                stats[d + 1] += 1
                continue
            footprint = height_diff * scale
            target = d
            size = res0
            while target > 1 and size < footprint:
                size *= 2.0
                target -= 1
            recon = 0.0
            for level in range(1, target + 1):
                shift = d - level
                nl = ns_v[level - 1]
                pr = (rf >> shift) + rr_v[level - 1]
                if pr >= nl:
                    pr -= nl
                pc = (cf >> shift) + rc_v[level - 1]
                if pc >= nl:
                    pc -= nl
                idx = off_v[level - 1] + pr * nl + pc
                m = z - recon
                if ob[idx] == 0:
                    val[idx] = m
                    var[idx] = v
                else:
                    pv = var[idx]
                    denom = pv + v
                    val[idx] = (val[idx] * v + m * pv) / denom
                    var[idx] = pv * v / denom
                if ob[idx] < 65535:
                    ob[idx] += 1
                la[idx] = ts
                recon += val[idx]
                stats[level - 1] += 1
    return stats_arr


# ---------------------------------------------------------------------------
# landing detector stages

def plane_fit_grid(heights, observed, offsets, res):
    """Least-squares plane per grid cell over a disc; see py_core."""
    h_arr = np.ascontiguousarray(heights, dtype=np.float64)
    o_arr = np.ascontiguousarray(observed, dtype=np.uint8)
    cdef double[:, ::1] h = h_arr
    cdef cnp.uint8_t[:, ::1] o = o_arr
    cdef cnp.int32_t[:, ::1] offs = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef double res_c = res
    cdef Py_ssize_t n0 = h.shape[0], n1 = h.shape[1], k_total = offs.shape[0]
    a_arr = np.zeros((n0, n1))
    b_arr = np.zeros((n0, n1))
    c_arr = np.zeros((n0, n1))
    cnt_arr = np.zeros((n0, n1))
    ok_arr = np.zeros((n0, n1), dtype=np.uint8)
    cdef double[:, ::1] av = a_arr
    cdef double[:, ::1] bv = b_arr
    cdef double[:, ::1] cv = c_arr
    cdef double[:, ::1] cntv = cnt_arr
    cdef cnp.uint8_t[:, ::1] okv = ok_arr
    cdef Py_ssize_t r, c, k, rr, cc
    cdef double px, py, zv2
    cdef double cnt, sx, sy, sxx, sxy, syy, sz, sxz, syz
    cdef double det, safe_det, aa, bb, ccoef
    with nogil:
        for r in range(n0):
            for c in range(n1):
                cnt = 0.0
                sx = 0.0
                sy = 0.0
                sxx = 0.0
                sxy = 0.0
                syy = 0.0
                sz = 0.0
                sxz = 0.0
                syz = 0.0
                for k in range(k_total):
                    rr = r + offs[k, 0]
                    cc = c + offs[k, 1]
                    if rr < 0 or rr >= n0 or cc < 0 or cc >= n1:
                        continue
                    if o[rr, cc] == 0:
                        continue
                    px = offs[k, 1] * res_c
                    py = offs[k, 0] * res_c
                    zv2 = h[rr, cc]
                    cnt += 1.0
                    sx += px
                    sy += py
                    sxx += px * px
                    sxy += px * py
                    syy += py * py
                    sz += zv2
                    sxz += zv2 * px
                    syz += zv2 * py
                det = (
                    sxx * (syy * cnt - sy * sy)
                    - sxy * (sxy * cnt - sy * sx)
                    + sx * (sxy * sy - syy * sx)
                )
                cntv[r, c] = cnt
                if cnt >= 3.0 and (det > 1e-12 or det < -1e-12):
                    safe_det = det
                    okv[r, c] = 1
                    aa = (
                        sxz * (syy * cnt - sy * sy)
                        - sxy * (syz * cnt - sy * sz)
                        + sx * (syz * sy - syy * sz)
                    ) / safe_det
                    bb = (
                        sxx * (syz * cnt - sy * sz)
                        - sxz * (sxy * cnt - sy * sx)
                        + sx * (sxy * sz - syz * sx)
                    ) / safe_det
                    ccoef = (
                        sxx * (syy * sz - syz * sy)
                        - sxy * (sxy * sz - syz * sx)
                        + sxz * (sxy * sy - syy * sx)
                    ) / safe_det
                    av[r, c] = aa
                    bv[r, c] = bb
                    cv[r, c] = ccoef
    return a_arr, b_arr, c_arr, cnt_arr, ok_arr.view(np.bool_)


def disc_max_exceeds(deviation, offsets, threshold, candidates):
    """Disc max of a deviation grid, thresholded (>=), candidate-masked."""
    d_arr = np.ascontiguousarray(deviation, dtype=np.float64)
    cand_arr = np.ascontiguousarray(candidates, dtype=np.uint8)
    cdef double[:, ::1] dev = d_arr
    cdef cnp.uint8_t[:, ::1] cand = cand_arr
    cdef cnp.int32_t[:, ::1] offs = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef double thr = threshold
    cdef Py_ssize_t n0 = dev.shape[0], n1 = dev.shape[1], k_total = offs.shape[0]
    out_arr = np.zeros((n0, n1), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, k, rr, cc
    cdef double best, v
    with nogil:
        for r in range(n0):
            for c in range(n1):
                if cand[r, c] == 0:
                    continue
                best = -1e308
                for k in range(k_total):
                    rr = r + offs[k, 0]
                    cc = c + offs[k, 1]
                    if rr < 0 or rr >= n0 or cc < 0 or cc >= n1:
                        continue
                    v = dev[rr, cc]
                    if v > best:
                        best = v
                if best >= thr:
                    out[r, c] = 1
    return out_arr
