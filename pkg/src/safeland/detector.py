"""Coarse-to-fine landing site detection over a map snapshot.

Stage 0 marks the border band (cells near NO_DATA or the map edge) and
low-confidence cells. Stage 1 fits a least-squares plane per coarsest-layer
cell over the safe-landing-area disc and hazards slopes at or above the
threshold (boundary-exact cases classify hazardous, the conservative
choice).
Stage 2 walks the finer layers, hazarding cells whose disc's maximum
deviation from the stage-1 plane exceeds the roughness threshold — first
over the smaller rock area, then over the full safe landing area. Cells
hazarded at a layer are skipped at finer layers; an exhaustive mode that
evaluates everything is available and must classify identically.

The survivors are SAFE; an exact Euclidean distance transform to the
nearest non-SAFE cell then yields ranked landing-site candidates.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .mapping import MapSnapshot, PyramidMap

# classification codes double as the 8-bit PGM export values
CODE_NO_DATA = 0
CODE_HAZARD = 64
CODE_UNKNOWN = 128
CODE_BORDER = 192
CODE_SAFE = 255

CLASS_NAMES = {
    CODE_NO_DATA: "NO_DATA",
    CODE_HAZARD: "HAZARD",
    CODE_UNKNOWN: "UNKNOWN",
    CODE_BORDER: "BORDER",
    CODE_SAFE: "SAFE",
}

_EPS = 1e-9


@dataclass(frozen=True)
class LandingConfig:
    """Landing-site requirements; safe_area_radius = keepout + margin."""

    keepout_radius: float = 0.5
    safety_margin: float = 0.1
    rock_area_radius: float = 0.5
    max_slope_deg: float = 10.0
    max_roughness: float = 0.1
    min_observations: int = 3
    max_variance: float | None = None

    def __post_init__(self):
        if self.keepout_radius <= 0.0 or self.rock_area_radius <= 0.0:
            raise ValueError("radii must be positive")
        if self.safety_margin < 0.0:
            raise ValueError("safety_margin must be >= 0")
        if not 0.0 < self.max_slope_deg < 90.0:
            raise ValueError("max_slope_deg must be in (0, 90)")
        if self.rock_area_radius > self.safe_area_radius + _EPS:
            raise ValueError("rock_area_radius must not exceed the safe landing area")

    @property
    def safe_area_radius(self):
        return self.keepout_radius + self.safety_margin

    def resolved_max_variance(self, finest_resolution):
        if self.max_variance is not None:
            return self.max_variance
        return (2.0 * finest_resolution) ** 2


@dataclass
class PlaneFit:
    """Least-squares plane around a cell: z = a*dx + b*dy + c relative to center."""

    ok: bool
    slope_deg: float
    coeffs: tuple
    rms: float
    support: int
    center_xy: tuple

    def height_at(self, x, y):
        a, b, c = self.coeffs
        return a * (x - self.center_xy[0]) + b * (y - self.center_xy[1]) + c


@dataclass
class LandingMap:
    """Detection result: class grid, clearance field, ranked candidates."""

    class_grid: np.ndarray
    distance_field: np.ndarray
    candidates: list
    config: LandingConfig
    origin: np.ndarray
    resolution: float

    def class_at(self, row, col):
        return int(self.class_grid[row, col])


def disc_offsets(radius, res):
    """(drow, dcol) int32 offsets whose cell centers lie within radius."""
    m = int(math.floor(radius / res + _EPS))
    out = []
    rr = radius * radius + _EPS
    for dr in range(-m, m + 1):
        for dc in range(-m, m + 1):
            if (dr * dr + dc * dc) * (res * res) <= rr:
                out.append((dr, dc))
    return np.array(out, dtype=np.int32).reshape(-1, 2)


def _snapshot_of(map_or_snapshot):
    if isinstance(map_or_snapshot, PyramidMap):
        return map_or_snapshot.snapshot()
    if isinstance(map_or_snapshot, MapSnapshot):
        return map_or_snapshot
    raise TypeError("expected PyramidMap or MapSnapshot")


def fit_plane(map_or_snapshot, center_cell, radius, level=1):
    """Fit the local plane around a cell of the given layer.

    center_cell is (row, col) at that layer. Returns a PlaneFit whose ok
    flag is False when the disc holds fewer than 3 observed cells or the
    fit is singular (the UNKNOWN signal).
    """
    snap = _snapshot_of(map_or_snapshot)
    res = snap.config.resolution(level)
    heights, obsmask = _level_grid(snap, level)
    offs = disc_offsets(radius, res)
    a, b, c, cnt, ok = _kernels.plane_fit_grid(
        heights, obsmask.astype(np.uint8), offs, res
    )
    r, c_ = center_cell
    n = heights.shape[0]
    cx = float(snap.origin[0] + (c_ + 0.5) * res)
    cy = float(snap.origin[1] + (r + 0.5) * res)
    if not ok[r, c_]:
        return PlaneFit(False, float("nan"), (0.0, 0.0, 0.0), float("nan"),
                        int(cnt[r, c_]), (cx, cy))
    coeffs = (float(a[r, c_]), float(b[r, c_]), float(c[r, c_]))
    slope = math.degrees(math.atan(math.hypot(coeffs[0], coeffs[1])))
    sq = 0.0
    m = 0
    for dr, dc in offs:
        rr, cc = r + dr, c_ + dc
        if 0 <= rr < n and 0 <= cc < n and obsmask[rr, cc]:
            resid = heights[rr, cc] - (coeffs[0] * (dc * res) + coeffs[1] * (dr * res) + coeffs[2])
            sq += resid * resid
            m += 1
    rms = math.sqrt(sq / m) if m else float("nan")
    return PlaneFit(True, slope, coeffs, rms, m, (cx, cy))


def roughness(map_or_snapshot, center_cell, radius, level, plane):
    """Max |reconstructed height - plane| over the disc at finest granularity.

    center_cell is a finest-layer (row, col). Cells unresolved at `level`
    contribute their deepest resolved height. Returns (meters, supported);
    supported is False when the disc holds no observed cell.
    """
    snap = _snapshot_of(map_or_snapshot)
    res = snap.config.finest_resolution
    heights, _ = snap.reconstruct_grid(level)
    n = heights.shape[0]
    xs, ys = snap.fine_cell_centers()
    r, c_ = center_cell
    best = -math.inf
    for dr, dc in disc_offsets(radius, res):
        rr, cc = r + dr, c_ + dc
        if 0 <= rr < n and 0 <= cc < n and np.isfinite(heights[rr, cc]):
            dev = abs(heights[rr, cc] - plane.height_at(xs[cc], ys[rr]))
            if dev > best:
                best = dev
    if best == -math.inf:
        return 0.0, False
    return float(best), True


def confidence(pyramid, x, y, config, finest_resolution=None):
    """True (CONFIDENT) when the cell passes the observation and variance gates."""
    res = pyramid.config.finest_resolution if finest_resolution is None else finest_resolution
    max_var = config.resolved_max_variance(res)
    cnt = pyramid.observation_count(x, y)
    if cnt < config.min_observations:
        return False
    var = pyramid.reconstruct_variance(x, y)
    return bool(np.isfinite(var) and var <= max_var)


def distance_transform(class_grid, resolution):
    """Exact Euclidean clearance (meters) of SAFE cells to the nearest non-SAFE cell."""
    safe = class_grid == CODE_SAFE
    if not np.any(safe):
        return np.zeros(class_grid.shape, dtype=np.float64)
    if np.all(safe):
        # degenerate: no hazard anywhere; clearance is distance to the map edge
        n0, n1 = class_grid.shape
        ii = np.arange(n0)[:, None]
        jj = np.arange(n1)[None, :]
        axis = np.minimum(np.minimum(ii + 1, n0 - ii), np.minimum(jj + 1, n1 - jj))
        return axis.astype(np.float64) * resolution
    return ndimage.distance_transform_edt(safe) * resolution


def rank_candidates(landing_map, max_count=None):
    """Ranked landing candidates from the clearance field.

    Local maxima (8-neighborhood, plateaus included) with clearance at least
    the safe-landing-area radius, non-maximum-suppressed within that radius,
    sorted by clearance descending with (row, col) tie-breaks.
    """
    dist = landing_map.distance_field
    safe_r = landing_map.config.safe_area_radius
    n0, n1 = dist.shape
    is_max = dist >= safe_r - _EPS
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.full_like(dist, -np.inf)
            src_r = slice(max(0, dr), min(n0, n0 + dr))
            dst_r = slice(max(0, -dr), min(n0, n0 - dr))
            src_c = slice(max(0, dc), min(n1, n1 + dc))
            dst_c = slice(max(0, -dc), min(n1, n1 - dc))
            shifted[dst_r, dst_c] = dist[src_r, src_c]
            is_max &= dist >= shifted
    rows, cols = np.nonzero(is_max)
    if rows.size == 0:
        return []
    clearance = dist[rows, cols]
    order = np.lexsort((cols, rows, -clearance))
    res = landing_map.resolution
    suppress2 = (safe_r / res) ** 2
    kept = []
    out = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        if any((r - kr) ** 2 + (c - kc) ** 2 <= suppress2 + _EPS for kr, kc in kept):
            continue
        kept.append((r, c))
        wx = float(landing_map.origin[0] + (c + 0.5) * res)
        wy = float(landing_map.origin[1] + (r + 0.5) * res)
        out.append((r, c, wx, wy, float(clearance[k])))
        if max_count is not None and len(out) >= max_count:
            break
    return out


def _level_grid(snap, level):
    """Heights and observed mask at a layer's own granularity."""
    n_l = snap.config.layer_cells(level)
    obs1 = snap.obs[0] > 0
    rep = n_l // obs1.shape[0]
    obsmask = np.repeat(np.repeat(obs1, rep, 0), rep, 1) if rep > 1 else obs1.copy()
    h = np.zeros((n_l, n_l), dtype=np.float64)
    for k in range(1, level + 1):
        rep = n_l // snap.value[k - 1].shape[0]
        v = np.where(snap.obs[k - 1] > 0, snap.value[k - 1], 0.0)
        h += np.repeat(np.repeat(v, rep, 0), rep, 1) if rep > 1 else v
    return h, obsmask


def detect(map_or_snapshot, config, prune=True, max_candidates=None):
    """Classify every finest-layer cell and extract landing candidates."""
    snap = _snapshot_of(map_or_snapshot)
    d = snap.depth
    cfg = snap.config
    n = cfg.extent_cells
    res_f = cfg.finest_resolution
    res_1 = cfg.resolution(1)
    safe_r = config.safe_area_radius
    max_var = config.resolved_max_variance(res_f)
    coarse_rep = 1 << (d - 1)

    obs1_f = snap._fine(snap.obs[0], 1) > 0
    nodata = ~obs1_f
    var_deep, cnt_deep = snap.deepest_state_grid(d)
    with np.errstate(invalid="ignore"):
        confident = (cnt_deep >= config.min_observations) & (var_deep <= max_var)

    # stage 0: border band and confidence gate
    limit2 = (safe_r / res_f) ** 2 + _EPS
    ii = np.arange(n)[:, None]
    jj = np.arange(n)[None, :]
    edge_d2 = np.minimum(np.minimum(ii, jj), np.minimum(n - 1 - ii, n - 1 - jj)) ** 2
    near2 = edge_d2.astype(np.float64)
    if np.any(nodata):
        dn = ndimage.distance_transform_edt(~nodata)
        near2 = np.minimum(near2, dn * dn)
    border = (near2 <= limit2) & ~nodata

    cls = np.full((n, n), CODE_SAFE, dtype=np.uint8)
    cls[~confident] = CODE_UNKNOWN
    cls[border] = CODE_BORDER
    cls[nodata] = CODE_NO_DATA
    candidates = cls == CODE_SAFE

    # stage 1: slope of the coarsest layer over the safe landing area; on
    # very coarse maps the disc is widened to the 3x3 neighborhood so the
    # fit keeps enough support
    offs1 = disc_offsets(max(safe_r, 1.5 * res_1), res_1)
    a, b, c, _cnt, ok = _kernels.plane_fit_grid(
        snap.value[0], (snap.obs[0] > 0).astype(np.uint8), offs1, res_1
    )
    slope_tan = np.sqrt(a * a + b * b)
    max_tan = math.tan(math.radians(config.max_slope_deg))
    hz1 = np.repeat(np.repeat(ok & (slope_tan >= max_tan), coarse_rep, 0), coarse_rep, 1)
    unk1 = np.repeat(np.repeat(~ok, coarse_rep, 0), coarse_rep, 1)
    cls[hz1 & candidates] = CODE_HAZARD
    cls[unk1 & candidates] = CODE_UNKNOWN
    candidates &= ~(hz1 | unk1)

    # stage-1 plane sampled at fine-cell centers (relative to coarse centers)
    a_f = np.repeat(np.repeat(a, coarse_rep, 0), coarse_rep, 1)
    b_f = np.repeat(np.repeat(b, coarse_rep, 0), coarse_rep, 1)
    c_f = np.repeat(np.repeat(c, coarse_rep, 0), coarse_rep, 1)
    fine_pos = (np.arange(n) + 0.5) * res_f
    coarse_pos = (np.arange(n) // coarse_rep + 0.5) * res_1
    rel = fine_pos - coarse_pos
    plane_f = a_f * rel[None, :] + b_f * rel[:, None] + c_f

    # stage 2: roughness against the stage-1 plane, rock area then safe area
    offs_rock = disc_offsets(config.rock_area_radius, res_f)
    offs_safe = disc_offsets(safe_r, res_f)
    everything = np.ones((n, n), dtype=bool)
    for level in range(2, d + 1):
        heights, _ = snap.reconstruct_grid(level)
        with np.errstate(invalid="ignore"):
            dev = np.where(obs1_f, np.abs(heights - plane_f), -np.inf)
        for offs in (offs_rock, offs_safe):
            mask = candidates if prune else everything
            hz = _kernels.disc_max_exceeds(dev, offs, config.max_roughness, mask.astype(np.uint8))
            newly = (hz != 0) & candidates
            cls[newly] = CODE_HAZARD
            candidates &= ~newly

    dist = distance_transform(cls, res_f)
    lm = LandingMap(
        class_grid=cls,
        distance_field=dist,
        candidates=[],
        config=config,
        origin=snap.origin.copy(),
        resolution=res_f,
    )
    lm.candidates = rank_candidates(lm, max_candidates)
    return lm
