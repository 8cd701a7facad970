"""Robot-centric rolling multi-resolution elevation map.

The map is a Laplacian-pyramid grid: layer 1 (coarsest) stores absolute
heights, layers 2..d store residuals, each layer sub-sampled by two.
Measurements are fused coarse-to-fine with scalar Kalman updates down to
the layer matching their pixel footprint (dynamic level of detail). The
grid is a 2D rolling buffer: recentering shifts indices and resets cells
that leave the extent, never moving surviving data.

Cell storage is four flat buffers (value f64, variance f64, observation
count u16, last-update time f32) shared with the fusion kernels; for a
3-layer map this stays within 4/3 of the finest layer's cell count.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, FootprintError, FormatError, VarianceError

NO_DATA = float("nan")

OBS_SATURATION = 65535


@dataclass(frozen=True)
class MapConfig:
    """Pyramid geometry: layer count, finest cell size, finest cell count."""

    depth: int = 3
    finest_resolution: float = 0.08
    extent_cells: int = 200
    disparity_error_px: float = 0.25

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.finest_resolution <= 0.0:
            raise ValueError("finest_resolution must be positive")
        coarse = 1 << (self.depth - 1)
        if self.extent_cells <= 0 or self.extent_cells % coarse != 0:
            raise ValueError(
                "extent_cells (%d) must be a positive multiple of 2^(depth-1) = %d"
                % (self.extent_cells, coarse)
            )

    def resolution(self, level):
        """Cell size in meters at a layer (1 = coarsest, depth = finest)."""
        if not 1 <= level <= self.depth:
            raise ValueError("layer %d out of range 1..%d" % (level, self.depth))
        return self.finest_resolution * (1 << (self.depth - level))

    def layer_cells(self, level):
        if not 1 <= level <= self.depth:
            raise ValueError("layer %d out of range 1..%d" % (level, self.depth))
        return self.extent_cells >> (self.depth - level)

    @property
    def extent_m(self):
        return self.extent_cells * self.finest_resolution

    @property
    def total_cells(self):
        return sum(self.layer_cells(l) ** 2 for l in range(1, self.depth + 1))


@dataclass
class FusionStats:
    """Per-image fusion bookkeeping: updates per layer and rejection counts."""

    updates_per_layer: tuple
    rejected_invalid: int
    rejected_out_of_map: int
    rejected_footprint: int
    points_total: int

    @property
    def total_updates(self):
        return int(sum(self.updates_per_layer))

    @property
    def rejected_total(self):
        return self.rejected_invalid + self.rejected_out_of_map + self.rejected_footprint


def cell_index(x_d, level, depth):
    """Coarse-layer index of a finest-layer cell coordinate (per axis)."""
    if not 1 <= level <= depth:
        raise ValueError("layer %d out of range 1..%d" % (level, depth))
    return x_d >> (depth - level)


def pixel_footprint(z_a, z_i, camera):
    """Ground-projected width of one pixel for a measurement at elevation z_i.

    camera provides tan_half_fov and image_width. Raises FootprintError when
    the camera is not above the measurement.
    """
    diff = z_a - z_i
    if diff <= 0.0:
        raise FootprintError("camera altitude %g not above measurement %g" % (z_a, z_i))
    return 2.0 * diff * camera.tan_half_fov / camera.image_width


def target_level(footprint, config):
    """Deepest layer whose cell size is >= the measurement footprint.

    Footprints finer than the finest cell map to the finest layer;
    footprints coarser than layer 1 clamp to layer 1.
    """
    if footprint <= 0.0:
        raise ValueError("footprint must be positive")
    level = config.depth
    size = config.finest_resolution
    while level > 1 and size < footprint:
        size *= 2.0
        level -= 1
    return level


def measurement_variance(z, baseline, f_px, sigma_d, vertical_cos=1.0):
    """Height variance of a stereo depth measurement, m^2.

    sigma_z = z^2 * sigma_d / (baseline * f_px), projected to the vertical
    axis by the cosine of the ray-to-vertical angle (1 for nadir rays).
    Accepts scalars or arrays for z / vertical_cos.
    """
    if baseline <= 0.0:
        raise VarianceError("baseline must be positive, got %g" % baseline)
    if f_px <= 0.0:
        raise VarianceError("focal length must be positive, got %g" % f_px)
    sigma_z = z * z * sigma_d / (baseline * f_px)
    sigma_v = sigma_z * vertical_cos
    return sigma_v * sigma_v


def kalman_update(h_p, var_p, h_i, var_i):
    """Scalar Kalman fusion of a cell estimate with one measurement."""
    if var_p <= 0.0 or var_i <= 0.0:
        raise VarianceError("variances must be positive")
    denom = var_p + var_i
    h = (h_p * var_i + h_i * var_p) / denom
    var = var_p * var_i / denom
    return h, var


class PyramidMap:
    """Rolling multi-layer elevation grid with per-cell Kalman state."""

    def __init__(self, config, origin=(0.0, 0.0)):
        self.config = config
        self.origin = np.array([float(origin[0]), float(origin[1])])
        d = config.depth
        self._ns = np.array([config.layer_cells(l) for l in range(1, d + 1)], dtype=np.int64)
        offs = np.zeros(d, dtype=np.int64)
        total = 0
        for i, n in enumerate(self._ns):
            offs[i] = total
            total += int(n) * int(n)
        self._offs = offs
        self._total = total
        self._value = np.zeros(total, dtype=np.float64)
        self._variance = np.zeros(total, dtype=np.float64)
        self._obs = np.zeros(total, dtype=np.uint16)
        self._last = np.zeros(total, dtype=np.float32)
        # rolling offsets at the finest layer, always multiples of 2^(d-1)
        self._roll = [0, 0]

    @classmethod
    def centered(cls, config, center):
        half = config.extent_m / 2.0
        return cls(config, origin=(center[0] - half, center[1] - half))

    # -- geometry ---------------------------------------------------------

    @property
    def depth(self):
        return self.config.depth

    @property
    def extent_m(self):
        return self.config.extent_m

    @property
    def center(self):
        return self.origin + self.extent_m / 2.0

    @property
    def roll_offset(self):
        return tuple(self._roll)

    def bounds(self):
        return (
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.extent_m,
            self.origin[1] + self.extent_m,
        )

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bounds()
        return x0 <= x < x1 and y0 <= y < y1

    def fine_cell_of(self, x, y):
        """Finest-layer (row, col) of a world point; DomainError outside."""
        res = self.config.finest_resolution
        col = int(math.floor((x - self.origin[0]) / res))
        row = int(math.floor((y - self.origin[1]) / res))
        n = self.config.extent_cells
        if not (0 <= row < n and 0 <= col < n):
            raise DomainError("point (%g, %g) outside map bounds %s" % (x, y, self.bounds()))
        return row, col

    def cell_center(self, row, col, level=None):
        level = self.depth if level is None else level
        res = self.config.resolution(level)
        return (
            self.origin[0] + (col + 0.5) * res,
            self.origin[1] + (row + 0.5) * res,
        )

    def memory_bytes(self):
        """Bytes allocated for per-cell state."""
        return (
            self._value.nbytes + self._variance.nbytes + self._obs.nbytes + self._last.nbytes
        )

    # -- storage access ---------------------------------------------------

    def _layer_roll(self, level):
        s = self.depth - level
        return self._roll[0] >> s, self._roll[1] >> s

    def _phys_view(self, buf, level):
        n = int(self._ns[level - 1])
        off = int(self._offs[level - 1])
        return buf[off : off + n * n].reshape(n, n)

    def _logical(self, buf, level):
        rr, rc = self._layer_roll(level)
        return np.roll(np.roll(self._phys_view(buf, level), -rr, axis=0), -rc, axis=1)

    def _cell_flat_index(self, row_f, col_f, level):
        s = self.depth - level
        n = int(self._ns[level - 1])
        rr, rc = self._layer_roll(level)
        pr = (row_f >> s) + rr
        if pr >= n:
            pr -= n
        pc = (col_f >> s) + rc
        if pc >= n:
            pc -= n
        return int(self._offs[level - 1]) + pr * n + pc

    def cell_state(self, row_f, col_f, level):
        """(value, variance, observation_count, last_update) of the cell
        covering a finest-layer coordinate at the given layer."""
        i = self._cell_flat_index(row_f, col_f, level)
        return (
            float(self._value[i]),
            float(self._variance[i]),
            int(self._obs[i]),
            float(self._last[i]),
        )

    def set_cell(self, row_f, col_f, level, value, variance, obs=1, last=0.0):
        """Directly set one cell's state (tests and synthetic scenes)."""
        i = self._cell_flat_index(row_f, col_f, level)
        self._value[i] = value
        self._variance[i] = variance
        self._obs[i] = obs
        self._last[i] = last

    # -- fusion -----------------------------------------------------------

    def fuse_range_image(self, rimg, pose, camera, timestamp=None):
        """Fuse one RangeImage coarse-to-fine; returns FusionStats.

        The caller is responsible for recentering first (see recenter);
        points outside the current bounds are rejected and counted.
        """
        z_a = float(pose.position[2])
        fp_scale = 2.0 * camera.tan_half_fov / rimg.width
        ts = float(pose.t) if timestamp is None else float(timestamp)
        pts = rimg.points.reshape(-1, 3)
        xs = np.ascontiguousarray(pts[:, 0])
        ys = np.ascontiguousarray(pts[:, 1])
        zs = np.ascontiguousarray(pts[:, 2])
        vs = np.ascontiguousarray(rimg.variance.reshape(-1))
        d = self.depth
        roll_r = np.array([self._layer_roll(l)[0] for l in range(1, d + 1)], dtype=np.int64)
        roll_c = np.array([self._layer_roll(l)[1] for l in range(1, d + 1)], dtype=np.int64)
        stats = _kernels.fuse_points(
            self._value,
            self._variance,
            self._obs,
            self._last,
            self._offs,
            self._ns,
            roll_r,
            roll_c,
            d,
            xs,
            ys,
            zs,
            vs,
            z_a,
            fp_scale,
            self.config.finest_resolution,
            float(self.origin[0]),
            float(self.origin[1]),
            self.config.extent_cells,
            ts,
        )
        return FusionStats(
            updates_per_layer=tuple(int(v) for v in stats[:d]),
            rejected_invalid=int(stats[d]),
            rejected_out_of_map=int(stats[d + 1]),
            rejected_footprint=int(stats[d + 2]),
            points_total=int(xs.shape[0]),
        )

    # -- reconstruction ---------------------------------------------------

    def reconstruct(self, x, y, level=None):
        """(height, resolved_level) at a world point.

        Heights sum layer-1 plus residuals of observed layers up to `level`;
        unobserved residual layers contribute zero. resolved_level is the
        deepest observed layer that contributed; (nan, 0) when layer 1 has
        no data.
        """
        level = self.depth if level is None else level
        if not 1 <= level <= self.depth:
            raise ValueError("layer %d out of range" % level)
        row_f, col_f = self.fine_cell_of(x, y)
        i1 = self._cell_flat_index(row_f, col_f, 1)
        if self._obs[i1] == 0:
            return NO_DATA, 0
        h = float(self._value[i1])
        resolved = 1
        for l in range(2, level + 1):
            i = self._cell_flat_index(row_f, col_f, l)
            if self._obs[i] > 0:
                h += float(self._value[i])
                resolved = l
        return h, resolved

    def reconstruct_height(self, x, y, level=None):
        """Height at a world point or NaN when unobserved."""
        return self.reconstruct(x, y, level)[0]

    def reconstruct_variance(self, x, y, level=None):
        """Variance of the deepest observed layer <= level, NaN if none."""
        level = self.depth if level is None else level
        row_f, col_f = self.fine_cell_of(x, y)
        for l in range(level, 0, -1):
            i = self._cell_flat_index(row_f, col_f, l)
            if self._obs[i] > 0:
                return float(self._variance[i])
        return NO_DATA

    def observation_count(self, x, y, level=None):
        """Observation count of the deepest observed layer <= level (0 if none)."""
        level = self.depth if level is None else level
        row_f, col_f = self.fine_cell_of(x, y)
        for l in range(level, 0, -1):
            i = self._cell_flat_index(row_f, col_f, l)
            if self._obs[i] > 0:
                return int(self._obs[i])
        return 0

    # -- rolling ----------------------------------------------------------

    def recenter(self, uav_position, coverage_halfwidth=0.0, margin=None):
        """Move the map under the UAV when its sensor coverage leaves the bounds.

        The trigger is the nadir coverage square of the given halfwidth,
        inflated by one coarse cell (or `margin` meters). Shifts are
        quantized to whole coarsest-layer cells so every layer shifts by
        whole cells; surviving cells keep their state bit-exactly and
        vacated cells reset to NO_DATA. Returns the applied finest-layer
        (row, col) shift.
        """
        ux, uy = float(uav_position[0]), float(uav_position[1])
        m = self.config.resolution(1) if margin is None else float(margin)
        x0, y0, x1, y1 = self.bounds()
        w = coverage_halfwidth + m
        if x0 <= ux - w and ux + w <= x1 and y0 <= uy - w and uy + w <= y1:
            return (0, 0)
        coarse = 1 << (self.depth - 1)
        coarse_m = self.config.resolution(1)
        cx, cy = self.center
        dc = int(round((ux - cx) / coarse_m)) * coarse
        dr = int(round((uy - cy) / coarse_m)) * coarse
        if dr == 0 and dc == 0:
            return (0, 0)
        self._apply_shift(dr, dc)
        return (dr, dc)

    def shift_cells(self, dr, dc):
        """Shift the map by finest-layer cells (multiples of the coarse factor)."""
        coarse = 1 << (self.depth - 1)
        if dr % coarse or dc % coarse:
            raise ValueError("shifts must be multiples of %d finest cells" % coarse)
        if dr or dc:
            self._apply_shift(dr, dc)
        return (dr, dc)

    def _apply_shift(self, dr, dc):
        res = self.config.finest_resolution
        n_f = self.config.extent_cells
        for level in range(1, self.depth + 1):
            s = self.depth - level
            n = int(self._ns[level - 1])
            d_r = dr >> s if dr >= 0 else -((-dr) >> s)
            d_c = dc >> s if dc >= 0 else -((-dc) >> s)
            rr, rc = self._layer_roll(level)
            new_rr = (rr + d_r) % n
            new_rc = (rc + d_c) % n
            value = self._phys_view(self._value, level)
            variance = self._phys_view(self._variance, level)
            obs = self._phys_view(self._obs, level)
            last = self._phys_view(self._last, level)
            if abs(d_r) >= n or abs(d_c) >= n:
                value[:] = 0.0
                variance[:] = 0.0
                obs[:] = 0
                last[:] = 0.0
                continue
            if d_r > 0:
                rows = (np.arange(n - d_r, n) + new_rr) % n
            elif d_r < 0:
                rows = (np.arange(0, -d_r) + new_rr) % n
            else:
                rows = np.empty(0, dtype=np.int64)
            if d_c > 0:
                cols = (np.arange(n - d_c, n) + new_rc) % n
            elif d_c < 0:
                cols = (np.arange(0, -d_c) + new_rc) % n
            else:
                cols = np.empty(0, dtype=np.int64)
            if rows.size:
                value[rows, :] = 0.0
                variance[rows, :] = 0.0
                obs[rows, :] = 0
                last[rows, :] = 0.0
            if cols.size:
                value[:, cols] = 0.0
                variance[:, cols] = 0.0
                obs[:, cols] = 0
                last[:, cols] = 0.0
        self._roll[0] = (self._roll[0] + dr) % n_f
        self._roll[1] = (self._roll[1] + dc) % n_f
        self.origin[0] += dc * res
        self.origin[1] += dr * res

    # -- snapshots (read-only logical views for detector / evaluation) ----

    def snapshot(self):
        return MapSnapshot(self)


class MapSnapshot:
    """Immutable logical-order copy of a map's layers for readers."""

    def __init__(self, pyramid):
        self.config = pyramid.config
        self.origin = pyramid.origin.copy()
        d = pyramid.depth
        self.value = [pyramid._logical(pyramid._value, l) for l in range(1, d + 1)]
        self.variance = [pyramid._logical(pyramid._variance, l) for l in range(1, d + 1)]
        self.obs = [pyramid._logical(pyramid._obs, l) for l in range(1, d + 1)]
        self.last = [pyramid._logical(pyramid._last, l) for l in range(1, d + 1)]

    @property
    def depth(self):
        return self.config.depth

    def _fine(self, arr, level):
        s = 1 << (self.depth - level)
        if s == 1:
            return arr
        return np.repeat(np.repeat(arr, s, axis=0), s, axis=1)

    def fine_cell_centers(self):
        """(xs, ys) 1-D center coordinates of the finest grid's columns/rows."""
        n = self.config.extent_cells
        res = self.config.finest_resolution
        xs = self.origin[0] + (np.arange(n) + 0.5) * res
        ys = self.origin[1] + (np.arange(n) + 0.5) * res
        return xs, ys

    def reconstruct_grid(self, level=None):
        """(heights, resolved) at finest-grid granularity.

        heights is NaN where layer 1 is unobserved; resolved holds the
        deepest observed layer per cell (0 where no data).
        """
        level = self.depth if level is None else level
        obs1 = self._fine(self.obs[0], 1) > 0
        h = np.where(obs1, self._fine(self.value[0], 1), np.nan)
        resolved = np.where(obs1, 1, 0)
        for l in range(2, level + 1):
            obs_l = self._fine(self.obs[l - 1], l) > 0
            h = h + np.where(obs_l, self._fine(self.value[l - 1], l), 0.0)
            resolved = np.where(obs_l, l, resolved)
        return h, resolved

    def deepest_state_grid(self, level=None):
        """(variance, obs_count) of the deepest observed layer per fine cell."""
        level = self.depth if level is None else level
        n = self.config.extent_cells
        var = np.full((n, n), np.nan)
        cnt = np.zeros((n, n), dtype=np.int64)
        for l in range(1, level + 1):
            obs_l = self._fine(self.obs[l - 1], l) > 0
            var = np.where(obs_l, self._fine(self.variance[l - 1], l), var)
            cnt = np.where(obs_l, self._fine(self.obs[l - 1], l).astype(np.int64), cnt)
        return var, cnt


def measurement_halfwidth(rimg, pose):
    """Largest axis offset of a frame's valid points from the UAV position.

    Drives the recenter trigger: the map moves only when measurements fall
    outside its bounds.
    """
    z = rimg.points[:, :, 2]
    ok = np.isfinite(z)
    if not ok.any():
        return 0.0
    dx = np.max(np.abs(rimg.points[:, :, 0][ok] - pose.position[0]))
    dy = np.max(np.abs(rimg.points[:, :, 1][ok] - pose.position[1]))
    return float(max(dx, dy))


def fuse_stream(pyramid, stream, camera, on_frame=None):
    """Recenter + fuse every (pose, RangeImage) of a stream, in order.

    Returns a list of (pose, shift, FusionStats); on_frame(pyramid, pose,
    stats) runs after each frame when given.
    """
    out = []
    for pose, rimg in stream:
        hw = measurement_halfwidth(rimg, pose)
        shift = pyramid.recenter(pose.position, coverage_halfwidth=hw)
        stats = pyramid.fuse_range_image(rimg, pose, camera)
        out.append((pose, shift, stats))
        if on_frame is not None:
            on_frame(pyramid, pose, stats)
    return out


# ---------------------------------------------------------------------------
# map dump / load


def dump_map(pyramid, out_dir, timestamp=None):
    """Write the map as per-layer CSVs plus a JSON header.

    CSV rows are (row, col, value, variance, observation_count) for observed
    cells only, in logical row-major order. The header records config,
    origin and roll_offset.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = pyramid.config
    header = {
        "format": "safeland-map-dump-v1",
        "config": {
            "depth": cfg.depth,
            "finest_resolution": cfg.finest_resolution,
            "extent_cells": cfg.extent_cells,
            "disparity_error_px": cfg.disparity_error_px,
        },
        "origin": [float(pyramid.origin[0]), float(pyramid.origin[1])],
        "roll_offset": list(pyramid.roll_offset),
        "timestamp": timestamp,
        "layers": ["layer_%d.csv" % l for l in range(1, cfg.depth + 1)],
    }
    with open(os.path.join(out_dir, "header.json"), "w") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    for level in range(1, cfg.depth + 1):
        value = pyramid._logical(pyramid._value, level)
        variance = pyramid._logical(pyramid._variance, level)
        obs = pyramid._logical(pyramid._obs, level)
        rows, cols = np.nonzero(obs)
        with open(os.path.join(out_dir, "layer_%d.csv" % level), "w") as fh:
            fh.write("row,col,value,variance,observation_count\n")
            for r, c in zip(rows, cols):
                fh.write(
                    "%d,%d,%s,%s,%d\n"
                    % (r, c, repr(float(value[r, c])), repr(float(variance[r, c])), obs[r, c])
                )


def load_map(dump_dir):
    """Rebuild a PyramidMap from a dump directory (roll normalized to zero)."""
    path = os.path.join(dump_dir, "header.json")
    try:
        with open(path) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError("cannot read map header %s: %s" % (path, exc)) from exc
    if header.get("format") != "safeland-map-dump-v1":
        raise FormatError("unrecognized map dump format in %s" % path)
    c = header["config"]
    cfg = MapConfig(
        depth=int(c["depth"]),
        finest_resolution=float(c["finest_resolution"]),
        extent_cells=int(c["extent_cells"]),
        disparity_error_px=float(c.get("disparity_error_px", 0.25)),
    )
    pyramid = PyramidMap(cfg, origin=header["origin"])
    for level in range(1, cfg.depth + 1):
        fname = os.path.join(dump_dir, "layer_%d.csv" % level)
        value = pyramid._phys_view(pyramid._value, level)
        variance = pyramid._phys_view(pyramid._variance, level)
        obs = pyramid._phys_view(pyramid._obs, level)
        n = value.shape[0]
        with open(fname) as fh:
            head = fh.readline().strip()
            if head != "row,col,value,variance,observation_count":
                raise FormatError("bad layer CSV header in %s" % fname)
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) != 5:
                    raise FormatError("bad layer CSV row in %s: %r" % (fname, line))
                r, c_ = int(parts[0]), int(parts[1])
                if not (0 <= r < n and 0 <= c_ < n):
                    raise FormatError("cell (%d, %d) outside layer %d" % (r, c_, level))
                value[r, c_] = float(parts[2])
                variance[r, c_] = float(parts[3])
                obs[r, c_] = int(parts[4])
    return pyramid
