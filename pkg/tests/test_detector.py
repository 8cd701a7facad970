import math

import numpy as np
import pytest

from conftest import fuse_surface
from safeland import LandingConfig, MapConfig, PyramidMap, detect
from safeland.detector import (
    CODE_BORDER,
    CODE_HAZARD,
    CODE_NO_DATA,
    CODE_SAFE,
    CODE_UNKNOWN,
    confidence,
    disc_offsets,
    distance_transform,
    fit_plane,
    rank_candidates,
    roughness,
)

LC = LandingConfig(keepout_radius=0.4, safety_margin=0.2, rock_area_radius=0.4,
                   max_slope_deg=10.0, max_roughness=0.1, min_observations=1)


def filled_map(fn, cfg=None, passes=2, variance=1e-8):
    cfg = cfg or MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    for _ in range(passes):
        fuse_surface(m, fn, variance=variance, pin_level=False)
    return m


def brute_force_edt(safe_mask, res):
    n0, n1 = safe_mask.shape
    out = np.zeros((n0, n1))
    hz = np.argwhere(~safe_mask)
    for r in range(n0):
        for c in range(n1):
            if safe_mask[r, c]:
                d2 = np.min((hz[:, 0] - r) ** 2 + (hz[:, 1] - c) ** 2)
                out[r, c] = math.sqrt(d2) * res
    return out


# ---------------------------------------------------------------------------
# plane fit and roughness


def test_fit_plane_recovers_slope():
    tan5 = math.tan(math.radians(5.0))
    m = filled_map(lambda x, y: tan5 * x)
    pf = fit_plane(m, (4, 4), radius=0.64, level=1)
    assert pf.ok
    assert pf.slope_deg == pytest.approx(5.0, abs=0.1)


def test_fit_plane_horizontal_zero_slope_zero_residual():
    m = filled_map(lambda x, y: np.full_like(x, 2.5))
    pf = fit_plane(m, (4, 4), radius=0.64, level=1)
    assert pf.ok
    assert pf.slope_deg == pytest.approx(0.0, abs=1e-6)
    assert pf.rms == pytest.approx(0.0, abs=1e-9)
    assert pf.height_at(*pf.center_xy) == pytest.approx(2.5, abs=1e-6)


def test_fit_plane_insufficient_support_signals_unknown():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    m.set_cell(8, 8, 1, value=1.0, variance=0.1)
    pf = fit_plane(m, (2, 2), radius=0.64, level=1)
    assert not pf.ok


def test_boundary_slope_is_hazard():
    """A plane at the threshold (up to fit rounding) classifies HAZARD; one
    just below stays SAFE. Equality is hazardous, the conservative choice."""
    tan20 = math.tan(math.radians(20.0))
    lc = LandingConfig(keepout_radius=0.3, safety_margin=0.1, rock_area_radius=0.3,
                       max_slope_deg=20.0, max_roughness=0.5, min_observations=1)
    cfg = MapConfig(depth=2, finest_resolution=0.08, extent_cells=64)

    def classify(slope_tan):
        m = PyramidMap(cfg, origin=(0.0, 0.0))
        fuse_surface(m, lambda x, y: slope_tan * (x - 2.56), variance=1e-10,
                     pin_level=False)
        return detect(m, lc).class_grid[16:48, 16:48]

    at = classify(tan20 * (1.0 + 1e-12))
    assert np.all(at != CODE_SAFE)
    assert np.any(at == CODE_HAZARD)
    below = classify(tan20 * (1.0 - 1e-9))
    assert np.all(below == CODE_SAFE)


def test_roughness_flat_is_zero():
    m = filled_map(lambda x, y: np.zeros_like(x))
    pf = fit_plane(m, (4, 4), radius=0.64, level=1)
    r, ok = roughness(m, (16, 16), radius=0.4, level=3, plane=pf)
    assert ok
    assert r == pytest.approx(0.0, abs=1e-9)


def test_roughness_half_sphere_apex():
    """A rock of radius 0.15 centered on a cell reads ~0.15 roughness."""
    cfg = MapConfig(depth=3, finest_resolution=0.04, extent_cells=64)
    cx, cy = 0.04 * 32 + 0.02, 0.04 * 32 + 0.02

    def surface(x, y):
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        return np.sqrt(np.maximum(0.15**2 - d2, 0.0))

    m = filled_map(surface, cfg=cfg)
    pf = fit_plane(m, (8, 8), radius=0.64, level=1)
    r, ok = roughness(m, (32, 32), radius=0.4, level=3, plane=pf)
    assert ok
    assert r == pytest.approx(0.15, abs=0.04)


def test_roughness_empty_disc_unsupported():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    pf_dummy = fit_plane(m, (4, 4), radius=0.64, level=1)
    r, ok = roughness(m, (32, 32), radius=0.4, level=3, plane=pf_dummy)
    assert r == 0.0
    assert not ok


# ---------------------------------------------------------------------------
# confidence


def test_confidence_gates():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    lc = LandingConfig(min_observations=3)
    x, y = m.cell_center(8, 8)
    m.set_cell(8, 8, 1, value=1.0, variance=1e-4, obs=1)
    assert not confidence(m, x, y, lc)
    m.set_cell(8, 8, 1, value=1.0, variance=1e-4, obs=10)
    assert confidence(m, x, y, lc)
    # unobserved cell is never confident
    assert not confidence(m, *m.cell_center(40, 40), lc)
    # variance gate
    m.set_cell(8, 8, 1, value=1.0, variance=10.0, obs=10)
    assert not confidence(m, x, y, lc)


# ---------------------------------------------------------------------------
# detect


def test_detect_flat_slope_all_interior_safe():
    tan5 = math.tan(math.radians(5.0))
    m = filled_map(lambda x, y: tan5 * x)
    lm = detect(m, LC)
    n = m.config.extent_cells
    band = int(math.ceil(LC.safe_area_radius / m.config.finest_resolution)) + 1
    interior = lm.class_grid[band:-band, band:-band]
    assert np.all(interior == CODE_SAFE)
    border = lm.class_grid[0, :]
    assert np.all(border != CODE_SAFE)


def test_detect_crater_rim_hazard_flat_outside():
    """Slope-violating terrain below a rim is HAZARD, flat terrain SAFE."""

    def crater(x, y):
        return np.where(x > 3.0, -np.clip((x - 3.0) * 0.8, 0.0, 1.6), 0.0)

    m = filled_map(crater)
    lm = detect(m, LC)
    n = m.config.extent_cells
    res = m.config.finest_resolution
    # steep band cells are hazard
    steep_cols = slice(int(3.2 / res), int(4.6 / res))
    flat_cols = slice(12, int(2.2 / res))
    assert np.all(lm.class_grid[16:48, steep_cols] != CODE_SAFE)
    assert np.any(lm.class_grid[16:48, steep_cols] == CODE_HAZARD)
    assert np.all(lm.class_grid[16:48, flat_cols] == CODE_SAFE)


def test_detect_rock_bump_hazard_and_conservatism():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    cx = cy = 0.08 * 32 + 0.04

    def surface(x, y):
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        return np.sqrt(np.maximum(0.2**2 - d2, 0.0))

    m = filled_map(surface, cfg=cfg)
    lm = detect(m, LC)
    n = cfg.extent_cells
    res = cfg.finest_resolution
    xs = (np.arange(n) + 0.5) * res
    X, Y = np.meshgrid(xs, xs)
    d = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2)
    # conservatism: nothing within keepout+margin of the rock is SAFE (the
    # 0.2 m apex is well above the 0.1 m roughness threshold)
    inside = d <= LC.safe_area_radius
    assert np.all(lm.class_grid[inside] != CODE_SAFE)
    assert np.any(lm.class_grid[inside] == CODE_HAZARD)
    assert np.any(lm.class_grid == CODE_SAFE)


def test_detect_unknown_for_low_confidence():
    m = filled_map(lambda x, y: np.zeros_like(x), passes=1)
    lc = LandingConfig(keepout_radius=0.4, safety_margin=0.2, rock_area_radius=0.4,
                       max_slope_deg=10.0, max_roughness=0.1, min_observations=5)
    lm = detect(m, lc)
    assert np.all(lm.class_grid != CODE_SAFE)
    assert np.any(lm.class_grid == CODE_UNKNOWN)


def test_detect_empty_map_all_no_data():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    lm = detect(m, LC)
    assert np.all(lm.class_grid == CODE_NO_DATA)
    assert lm.candidates == []


def test_detect_border_band_near_nodata():
    m = filled_map(lambda x, y: np.zeros_like(x))
    # punch a NO_DATA hole
    n = m.config.extent_cells
    for level in range(1, m.depth + 1):
        s = m.depth - level
        view_obs = m._phys_view(m._obs, level)
        view_obs[(32 >> s), (32 >> s)] = 0
    lm = detect(m, LC)
    res = m.config.finest_resolution
    hole = lm.class_grid[32, 32]
    assert hole == CODE_NO_DATA
    band_cells = int(LC.safe_area_radius / res)
    patch = lm.class_grid[32 - band_cells : 32 + band_cells + 1, 32]
    assert np.all((patch == CODE_BORDER) | (patch == CODE_NO_DATA))


def test_detect_deterministic():
    m = filled_map(lambda x, y: 0.01 * np.sin(3 * x) * np.cos(2 * y))
    a = detect(m, LC)
    b = detect(m, LC)
    assert np.array_equal(a.class_grid, b.class_grid)
    assert np.array_equal(a.distance_field, b.distance_field)
    assert a.candidates == b.candidates


def random_scene_map(rng, cfg=None):
    """Random synthetic pyramid content for property tests."""
    cfg = cfg or MapConfig(depth=3, finest_resolution=0.1, extent_cells=32)
    m = PyramidMap(cfg, origin=(0.0, 0.0))
    for level in range(1, cfg.depth + 1):
        nl = cfg.layer_cells(level)
        vals = rng.normal(0.0, 0.05 if level > 1 else 0.3, (nl, nl))
        obs = rng.random((nl, nl)) > (0.1 if level == 1 else 0.3)
        v = m._phys_view(m._value, level)
        o = m._phys_view(m._obs, level)
        va = m._phys_view(m._variance, level)
        v[:] = vals
        o[:] = np.where(obs, rng.integers(1, 30, (nl, nl)), 0).astype(np.uint16)
        va[:] = np.where(obs, 1e-4, 0.0)
    return m


def test_pruning_soundness_random_scenes():
    rng = np.random.default_rng(42)
    for _ in range(50):
        m = random_scene_map(rng)
        lc = LandingConfig(keepout_radius=0.3, safety_margin=0.2, rock_area_radius=0.3,
                           max_slope_deg=12.0, max_roughness=0.12, min_observations=2)
        a = detect(m, lc, prune=True)
        b = detect(m, lc, prune=False)
        assert np.array_equal(a.class_grid, b.class_grid)
        assert a.candidates == b.candidates


def test_margin_monotonicity_random_scenes():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = random_scene_map(rng)
        snap = m.snapshot()
        base = dict(keepout_radius=0.3, rock_area_radius=0.3, max_slope_deg=12.0,
                    max_roughness=0.12, min_observations=2)
        small = detect(snap, LandingConfig(safety_margin=0.1, **base))
        large = detect(snap, LandingConfig(safety_margin=0.3, **base))
        safe_small = small.class_grid == CODE_SAFE
        safe_large = large.class_grid == CODE_SAFE
        assert np.all(safe_small | ~safe_large), "larger margin must shrink SAFE set"


def test_threshold_monotonicity_random_scenes():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m = random_scene_map(rng)
        snap = m.snapshot()
        base = dict(keepout_radius=0.3, safety_margin=0.2, rock_area_radius=0.3,
                    min_observations=2)
        tight = detect(snap, LandingConfig(max_slope_deg=8.0, max_roughness=0.08, **base))
        loose = detect(snap, LandingConfig(max_slope_deg=15.0, max_roughness=0.2, **base))
        tight_safe = tight.class_grid == CODE_SAFE
        loose_safe = loose.class_grid == CODE_SAFE
        assert np.all(loose_safe | ~tight_safe), "raising thresholds must not shrink SAFE"


# ---------------------------------------------------------------------------
# distance transform and candidates


def test_distance_transform_single_hazard():
    grid = np.full((9, 9), CODE_SAFE, dtype=np.uint8)
    grid[4, 4] = CODE_HAZARD
    d = distance_transform(grid, 0.5)
    assert d[4, 4] == 0.0
    assert d[4, 5] == pytest.approx(0.5)
    assert d[0, 0] == pytest.approx(0.5 * math.hypot(4, 4))


def test_distance_transform_all_hazard_zero():
    grid = np.full((6, 6), CODE_HAZARD, dtype=np.uint8)
    assert np.all(distance_transform(grid, 0.1) == 0.0)


def test_distance_transform_matches_brute_force_random():
    rng = np.random.default_rng(3)
    for _ in range(10):
        grid = np.where(rng.random((32, 32)) > 0.3, CODE_SAFE, CODE_HAZARD).astype(np.uint8)
        if not np.any(grid != CODE_SAFE):
            grid[0, 0] = CODE_HAZARD
        d = distance_transform(grid, 0.25)
        bf = brute_force_edt(grid == CODE_SAFE, 0.25)
        assert np.array_equal(d, bf)


def test_rank_candidates_single_open_area():
    m = filled_map(lambda x, y: np.zeros_like(x))
    lm = detect(m, LC)
    assert len(lm.candidates) >= 1
    r, c, wx, wy, clearance = lm.candidates[0]
    n = m.config.extent_cells
    assert abs(r - (n - 1) / 2) <= 1.0
    assert abs(c - (n - 1) / 2) <= 1.0
    assert clearance == lm.distance_field.max()


def test_rank_candidates_tie_break_by_cell_index():
    grid = np.full((40, 40), CODE_SAFE, dtype=np.uint8)
    grid[:, 19:21] = CODE_HAZARD  # split into two equal open areas
    grid[0, :] = CODE_BORDER
    grid[-1, :] = CODE_BORDER
    grid[:, 0] = CODE_BORDER
    grid[:, -1] = CODE_BORDER
    from safeland.detector import LandingMap

    d = distance_transform(grid, 0.1)
    lm = LandingMap(class_grid=grid, distance_field=d, candidates=[],
                    config=LandingConfig(keepout_radius=0.2, safety_margin=0.1,
                                         rock_area_radius=0.2),
                    origin=np.zeros(2), resolution=0.1)
    cands = rank_candidates(lm)
    assert len(cands) >= 2
    assert cands[0][4] == pytest.approx(cands[1][4])
    assert (cands[0][0], cands[0][1]) < (cands[1][0], cands[1][1])


def test_candidates_clear_of_hazards():
    rng = np.random.default_rng(12)
    m = random_scene_map(rng)
    lc = LandingConfig(keepout_radius=0.2, safety_margin=0.1, rock_area_radius=0.2,
                       max_slope_deg=15.0, max_roughness=0.15, min_observations=2)
    lm = detect(m, lc)
    hz = np.argwhere(lm.class_grid != CODE_SAFE)
    for r, c, wx, wy, clearance in lm.candidates:
        assert clearance >= lc.safe_area_radius - 1e-9
        if hz.size:
            d = np.sqrt(np.min((hz[:, 0] - r) ** 2 + (hz[:, 1] - c) ** 2)) * lm.resolution
            assert d == pytest.approx(clearance, abs=1e-9)


def test_disc_offsets_inclusive_boundary():
    offs = disc_offsets(0.6, 0.06)
    d2 = offs[:, 0] ** 2 + offs[:, 1] ** 2
    assert d2.max() == 100  # exactly radius/res = 10 included
    assert len(offs) == sum(
        1
        for dr in range(-10, 11)
        for dc in range(-10, 11)
        if dr * dr + dc * dc <= 100
    )
