import math

import numpy as np
import pytest

from safeland.errors import DomainError, PlacementError
from safeland.terrain import (
    CLIFF,
    FLAT,
    ROCK,
    classify_point,
    generate_terrain,
    near_rock_mask,
    sample_height,
    sample_heights,
)


def test_degenerate_flat_terrain_is_zero_everywhere():
    t = generate_terrain(seed=123, extent=10.0, slope_deg=0.0, fractal_amplitude=0.0)
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 10, 200)
    ys = rng.uniform(0, 10, 200)
    assert np.all(sample_heights(t, xs, ys) == 0.0)


def test_rock_coverage_matches_request():
    t = generate_terrain(seed=1, extent=20.0, slope_deg=5.0, fractal_amplitude=0.0,
                         rock_diameter=0.3, rock_coverage=0.20)
    covered = float(np.sum(math.pi * t.rocks[:, 2] ** 2)) / 400.0
    assert 0.18 <= covered <= 0.22


def test_slope_height_difference():
    t = generate_terrain(seed=3, extent=20.0, slope_deg=5.0, fractal_amplitude=0.0)
    d = sample_height(t, 15.0, 4.0) - sample_height(t, 5.0, 4.0)
    assert d == pytest.approx(10.0 * math.tan(math.radians(5.0)), abs=1e-12)


def test_rock_apex_adds_radius():
    t = generate_terrain(seed=4, extent=20.0, slope_deg=3.0, fractal_amplitude=0.02,
                         rock_diameter=0.5, rock_coverage=0.05)
    cx, cy, r = t.rocks[0]
    base = t.fields.slope_tan * cx
    # fractal contribution at the center: sample a rock-free clone
    t2 = generate_terrain(seed=4, extent=20.0, slope_deg=3.0, fractal_amplitude=0.02)
    fract = sample_height(t2, cx, cy) - t2.fields.slope_tan * cx
    assert sample_height(t, cx, cy) == pytest.approx(base + fract + 0.25, abs=1e-12)
    assert r == 0.25


def test_cliff_drops_surface():
    t = generate_terrain(seed=5, extent=20.0, slope_deg=0.0, fractal_amplitude=0.0,
                         cliff=(12.0, 5.0))
    before = sample_height(t, 12.0 - 1e-9, 10.0)
    after = sample_height(t, 12.0 + 1e-9, 10.0)
    assert after == pytest.approx(before - 5.0, abs=1e-9)


def test_out_of_extent_query_raises():
    t = generate_terrain(seed=5, extent=10.0)
    with pytest.raises(DomainError):
        sample_height(t, 10.5, 2.0)
    with pytest.raises(DomainError):
        classify_point(t, -0.1, 2.0)


def test_determinism_bit_identical():
    a = generate_terrain(seed=77, extent=20.0, slope_deg=5.0, fractal_amplitude=0.05,
                         rock_diameter=0.3, rock_coverage=0.2, cliff=(15.0, 2.0))
    b = generate_terrain(seed=77, extent=20.0, slope_deg=5.0, fractal_amplitude=0.05,
                         rock_diameter=0.3, rock_coverage=0.2, cliff=(15.0, 2.0))
    assert np.array_equal(a.rocks, b.rocks)
    assert np.array_equal(a.fractal_grid, b.fractal_grid)
    rng = np.random.default_rng(1)
    xs = rng.uniform(0, 20, 500)
    ys = rng.uniform(0, 20, 500)
    assert np.array_equal(sample_heights(a, xs, ys), sample_heights(b, xs, ys))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_rocks_do_not_overlap(seed):
    t = generate_terrain(seed=seed, extent=15.0, fractal_amplitude=0.0,
                         rock_diameter=0.4, rock_coverage=0.2)
    from scipy.spatial import cKDTree

    tree = cKDTree(t.rocks[:, :2])
    d, _ = tree.query(t.rocks[:, :2], k=2)
    assert np.all(d[:, 1] >= 2 * t.rocks[0, 2] - 1e-12)


def test_fractal_zero_mean_over_extent():
    t = generate_terrain(seed=9, extent=20.0, slope_deg=0.0, fractal_amplitude=0.05)
    rng = np.random.default_rng(2)
    xs = rng.uniform(0, 20, 40000)
    ys = rng.uniform(0, 20, 40000)
    hs = sample_heights(t, xs, ys)
    assert abs(float(hs.mean())) < 0.005
    assert float(np.sqrt(np.mean(hs**2))) == pytest.approx(0.05, rel=0.25)


def test_infeasible_coverage_raises_placement_error():
    with pytest.raises(PlacementError, match="coverage"):
        generate_terrain(seed=0, extent=4.0, fractal_amplitude=0.0,
                         rock_diameter=1.0, rock_coverage=0.45)


def test_classify_rock_cliff_flat():
    t = generate_terrain(seed=6, extent=20.0, fractal_amplitude=0.0,
                         rock_diameter=0.4, rock_coverage=0.1, cliff=(15.0, 5.0),
                         cliff_band=1.0)
    cx, cy, _ = t.rocks[0]
    assert classify_point(t, cx, cy) == ROCK
    assert classify_point(t, 15.0, 10.0) == CLIFF
    # a point 10 m from the cliff edge with a 1 m band, away from rocks
    for y in np.linspace(0.3, 19.7, 200):
        if not near_rock_mask(t, np.array([5.0]), np.array([y]))[0]:
            assert classify_point(t, 5.0, y) == FLAT
            break
    else:
        pytest.fail("no rock-free probe point found")


def test_classify_rock_beats_cliff():
    t = generate_terrain(seed=8, extent=20.0, fractal_amplitude=0.0, cliff=(10.0, 5.0))
    # hand-place a rock straddling the cliff band
    t.rocks = np.array([[10.0, 5.0, 0.3]])
    t.fields = None
    t.__post_init__()
    assert classify_point(t, 10.0, 5.0) == ROCK
