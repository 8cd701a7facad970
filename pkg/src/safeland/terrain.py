"""Synthetic test terrains: sloped plane + seeded fractal roughness +
half-sphere rocks + an optional cliff step, queryable at any (x, y).

The surface is the ground truth for simulation and evaluation. All
randomness is driven by numpy Generators seeded from a single seed, so a
(seed, parameters) pair regenerates the exact same terrain.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, PlacementError

FLAT = 0
ROCK = 1
CLIFF = 2

CLASS_NAMES = {FLAT: "FLAT", ROCK: "ROCK", CLIFF: "CLIFF"}

_PLACEMENT_OVERSAMPLING = 10


class TerrainFields:
    """Plain numeric view of a terrain, consumed by the sampling kernels."""

    def __init__(self, slope_tan, extent_x, extent_y, fractal, fractal_inv_cell,
                 rocks, cliff_x, cliff_drop):
        self.slope_tan = float(slope_tan)
        self.extent_x = float(extent_x)
        self.extent_y = float(extent_y)
        self.fractal = np.ascontiguousarray(fractal, dtype=np.float64) if fractal is not None else None
        self.fractal_inv_cell = float(fractal_inv_cell)
        self.rocks = np.ascontiguousarray(rocks, dtype=np.float64).reshape(-1, 3)
        self.rock_r_max = float(self.rocks[:, 2].max()) if len(self.rocks) else 0.0
        self.cliff_x = float(cliff_x)
        self.cliff_drop = float(cliff_drop)
        self._build_rock_bins()

        fr_max = float(np.max(np.abs(fractal))) if fractal is not None else 0.0
        plane = (0.0, self.slope_tan * self.extent_x)
        self.h_max = max(plane) + fr_max + self.rock_r_max
        self.h_min = min(plane) - fr_max
        if math.isfinite(self.cliff_x):
            self.h_min -= self.cliff_drop

    def _build_rock_bins(self):
        # CSR bin index over rock centers for the compiled sampler; the bin
        # size is at least the largest radius so a covering rock is always
        # in the query's 3x3 bin neighborhood.
        n = len(self.rocks)
        if n == 0:
            self.bin_size = 1.0
            self.bin_nx = 1
            self.bin_ny = 1
            self.bin_start = np.zeros(2, dtype=np.int32)
            self.bin_items = np.zeros(0, dtype=np.int32)
            return
        self.bin_size = max(self.rock_r_max, max(self.extent_x, self.extent_y) / 128.0)
        self.bin_nx = max(1, int(math.ceil(self.extent_x / self.bin_size)))
        self.bin_ny = max(1, int(math.ceil(self.extent_y / self.bin_size)))
        bx = np.minimum((self.rocks[:, 0] / self.bin_size).astype(np.int64), self.bin_nx - 1)
        by = np.minimum((self.rocks[:, 1] / self.bin_size).astype(np.int64), self.bin_ny - 1)
        flat = by * self.bin_nx + bx
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.bin_nx * self.bin_ny)
        start = np.zeros(self.bin_nx * self.bin_ny + 1, dtype=np.int64)
        np.cumsum(counts, out=start[1:])
        self.bin_start = start.astype(np.int32)
        self.bin_items = order.astype(np.int32)


@dataclass
class TerrainModel:
    """Analytic ground-truth surface over a rectangular extent.

    rocks is an (n, 3) array of (center_x, center_y, radius) half-spheres;
    cliff, when present, drops the surface by `drop` meters for x > edge_x.
    """

    extent: tuple
    base_slope_deg: float
    fractal_amplitude: float
    seed: int
    rocks: np.ndarray
    cliff: tuple | None = None
    cliff_band: float = 0.6
    fractal_grid: np.ndarray | None = None
    fields: TerrainFields = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ex, ey = self.extent
        if self.fields is None:
            cliff_x, drop = (self.cliff if self.cliff is not None else (math.inf, 0.0))
            inv_cell = 0.0
            if self.fractal_grid is not None:
                inv_cell = (self.fractal_grid.shape[0] - 1) / max(ex, ey)
            self.fields = TerrainFields(
                slope_tan=math.tan(math.radians(self.base_slope_deg)),
                extent_x=ex,
                extent_y=ey,
                fractal=self.fractal_grid,
                fractal_inv_cell=inv_cell,
                rocks=self.rocks,
                cliff_x=cliff_x,
                cliff_drop=drop,
            )

    @property
    def rock_coverage(self):
        ex, ey = self.extent
        return float(np.sum(math.pi * self.rocks[:, 2] ** 2)) / (ex * ey)


def _diamond_square(levels, roughness, rng):
    """Midpoint-displacement fractal on a (2^levels + 1)^2 node grid."""
    size = (1 << levels) + 1
    g = np.zeros((size, size), dtype=np.float64)
    g[0, 0], g[0, -1], g[-1, 0], g[-1, -1] = rng.normal(0.0, 1.0, 4)
    idx = np.arange(size)
    step = size - 1
    scale = 1.0
    while step > 1:
        half = step >> 1
        scale *= 2.0 ** (-roughness)
        # diamond: square centers get the 4-corner mean plus displacement
        tl = g[0 : size - 1 : step, 0 : size - 1 : step]
        tr = g[0 : size - 1 : step, step:size:step]
        bl = g[step:size:step, 0 : size - 1 : step]
        br = g[step:size:step, step:size:step]
        g[half:size:step, half:size:step] = 0.25 * (tl + tr + bl + br) + rng.normal(
            0.0, scale, tl.shape
        )
        # square: edge midpoints get the mean of their in-bounds axis neighbors
        acc = np.zeros_like(g)
        cnt = np.zeros_like(g)
        acc[half:, :] += g[:-half, :]
        cnt[half:, :] += 1.0
        acc[:-half, :] += g[half:, :]
        cnt[:-half, :] += 1.0
        acc[:, half:] += g[:, :-half]
        cnt[:, half:] += 1.0
        acc[:, :-half] += g[:, half:]
        cnt[:, :-half] += 1.0
        is_node = (idx % half) == 0
        odd = ((idx // half) % 2) == 1
        row_odd = is_node & odd
        row_even = is_node & ~odd
        mask = row_odd[:, None] & row_even[None, :] | row_even[:, None] & row_odd[None, :]
        g[mask] = acc[mask] / cnt[mask] + rng.normal(0.0, scale, int(mask.sum()))
        step = half
    return g


def _weighted_node_mean(g):
    # Exact mean of the bilinear interpolant over the extent: interior nodes
    # weigh 1, edges 1/2, corners 1/4.
    w = np.ones(g.shape)
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return float(np.sum(g * w) / np.sum(w))


def _place_rocks(rng, extent, radius, coverage, budget_factor=_PLACEMENT_OVERSAMPLING):
    """Rejection-sample non-overlapping rock centers hitting a target coverage."""
    ex, ey = extent
    area = ex * ey
    n_target = int(round(coverage * area / (math.pi * radius * radius)))
    if n_target == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if ex < 2 * radius or ey < 2 * radius:
        raise PlacementError(
            "extent %gx%g too small for rocks of radius %g" % (ex, ey, radius)
        )
    # bin hash sized so overlaps can only come from the 3x3 neighborhood
    bin_size = 2.0 * radius
    nbx = max(1, int(math.ceil(ex / bin_size)))
    nby = max(1, int(math.ceil(ey / bin_size)))
    bins = {}
    placed = []
    attempts = 0
    budget = budget_factor * n_target
    min_d2 = (2.0 * radius) ** 2
    while len(placed) < n_target and attempts < budget:
        attempts += 1
        cx = radius + rng.random() * (ex - 2 * radius)
        cy = radius + rng.random() * (ey - 2 * radius)
        bx = min(int(cx / bin_size), nbx - 1)
        by = min(int(cy / bin_size), nby - 1)
        clash = False
        for nx in range(max(0, bx - 1), min(nbx, bx + 2)):
            for ny in range(max(0, by - 1), min(nby, by + 2)):
                for j in bins.get((nx, ny), ()):
                    ox, oy = placed[j]
                    if (cx - ox) ** 2 + (cy - oy) ** 2 < min_d2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if clash:
            continue
        bins.setdefault((bx, by), []).append(len(placed))
        placed.append((cx, cy))
    if len(placed) < n_target:
        achieved = len(placed) * math.pi * radius * radius / area
        raise PlacementError(
            "rock placement infeasible: placed %d of %d rocks "
            "(achieved coverage %.4f, requested %.4f)"
            % (len(placed), n_target, achieved, coverage)
        )
    rocks = np.empty((n_target, 3), dtype=np.float64)
    rocks[:, 0] = [p[0] for p in placed]
    rocks[:, 1] = [p[1] for p in placed]
    rocks[:, 2] = radius
    return rocks


def generate_terrain(
    seed,
    extent,
    slope_deg=0.0,
    fractal_amplitude=0.05,
    fractal_roughness=0.9,
    fractal_levels=8,
    rock_diameter=0.0,
    rock_coverage=0.0,
    cliff=None,
    cliff_band=0.6,
):
    """Build a TerrainModel from a seed and scene parameters.

    extent may be a scalar (square) or an (ex, ey) pair. The fractal
    component is normalized to zero mean over the extent with RMS equal to
    fractal_amplitude. Rocks are half-spheres of a single diameter placed
    by rejection sampling to hit rock_coverage of the total surface; cliff
    is an (edge_x, drop_m) pair or None.
    """
    if np.isscalar(extent):
        extent = (float(extent), float(extent))
    ex, ey = float(extent[0]), float(extent[1])
    if ex <= 0 or ey <= 0:
        raise ValueError("extent must be positive")
    if not 0.0 <= rock_coverage < 0.5:
        raise ValueError("rock_coverage must be in [0, 0.5)")

    ss = np.random.SeedSequence(seed)
    fract_rng, rock_rng = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2)]

    grid = None
    if fractal_amplitude > 0.0:
        grid = _diamond_square(fractal_levels, fractal_roughness, fract_rng)
        grid -= _weighted_node_mean(grid)
        rms = float(np.sqrt(np.mean(grid**2)))
        if rms > 0:
            grid *= fractal_amplitude / rms

    rocks = np.zeros((0, 3), dtype=np.float64)
    if rock_coverage > 0.0 and rock_diameter > 0.0:
        rocks = _place_rocks(rock_rng, (ex, ey), rock_diameter / 2.0, rock_coverage)

    return TerrainModel(
        extent=(ex, ey),
        base_slope_deg=float(slope_deg),
        fractal_amplitude=float(fractal_amplitude),
        seed=seed,
        rocks=rocks,
        cliff=tuple(cliff) if cliff is not None else None,
        cliff_band=float(cliff_band),
        fractal_grid=grid,
    )


def _check_extent(terrain, x, y):
    ex, ey = terrain.extent
    if not (0.0 <= x <= ex and 0.0 <= y <= ey):
        raise DomainError(
            "query (%g, %g) outside terrain extent %gx%g" % (x, y, ex, ey)
        )


def sample_height(terrain, x, y):
    """Ground-truth elevation at (x, y); raises DomainError outside the extent."""
    _check_extent(terrain, x, y)
    out = _kernels.terrain_heights(
        terrain.fields, np.array([float(x)]), np.array([float(y)])
    )
    return float(out[0])


def sample_heights(terrain, xs, ys):
    """Vectorized sample_height; out-of-extent queries return NaN."""
    return _kernels.terrain_heights(terrain.fields, xs, ys)


def near_rock_mask(terrain, xs, ys, margin=0.0):
    """True where a point lies within `margin` of any rock disc."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    mask = np.zeros(xs.shape, dtype=bool)
    rocks = terrain.rocks
    if len(rocks) == 0:
        return mask
    from scipy.spatial import cKDTree

    tree = cKDTree(rocks[:, :2])
    bound = float(rocks[:, 2].max()) + margin + 1e-9
    k = min(8, len(rocks))
    dist, idx = tree.query(np.column_stack((xs.ravel(), ys.ravel())), k=k,
                           distance_upper_bound=bound)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    flat = mask.ravel()
    for col in range(k):
        cand = idx[:, col]
        valid = cand < len(rocks)
        if not np.any(valid):
            break
        sel = np.flatnonzero(valid)
        rr = rocks[cand[sel], 2] + margin
        flat[sel] |= dist[sel, col] <= rr
    return flat.reshape(xs.shape)


def classify_point(terrain, x, y, cliff_band=None):
    """Terrain class at a point: ROCK beats CLIFF beats FLAT."""
    _check_extent(terrain, x, y)
    return int(classify_points(terrain, np.array([x]), np.array([y]), cliff_band)[0])


def classify_points(terrain, xs, ys, cliff_band=None):
    """Vectorized terrain segmentation into FLAT / ROCK / CLIFF codes."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    out = np.full(xs.shape, FLAT, dtype=np.int8)
    if terrain.cliff is not None:
        band = terrain.cliff_band if cliff_band is None else float(cliff_band)
        edge = terrain.cliff[0]
        out[np.abs(xs - edge) <= band] = CLIFF
    out[near_rock_mask(terrain, xs, ys)] = ROCK
    return out
