import math

import numpy as np
import pytest

from conftest import fuse_surface
from safeland import LandingConfig, MapConfig, PyramidMap, generate_terrain
from safeland.detector import (
    CODE_BORDER,
    CODE_HAZARD,
    CODE_NO_DATA,
    CODE_SAFE,
    CODE_UNKNOWN,
    LandingMap,
)
from safeland.evalbench import (
    Scenario,
    benchmark,
    check_gates,
    format_rockfield_table,
    landing_metrics,
    map_rmse,
)


def make_landing_map(grid, origin=(0.0, 0.0), res=0.1):
    return LandingMap(
        class_grid=grid,
        distance_field=np.zeros(grid.shape),
        candidates=[],
        config=LandingConfig(keepout_radius=0.2, safety_margin=0.1, rock_area_radius=0.2),
        origin=np.array(origin, dtype=float),
        resolution=res,
    )


def test_landing_metrics_all_correct():
    t = generate_terrain(seed=3, extent=4.0, fractal_amplitude=0.0)
    t.rocks = np.array([[2.0, 2.0, 0.3]])
    t.fields = None
    t.__post_init__()
    n = 40
    grid = np.full((n, n), CODE_SAFE, dtype=np.uint8)
    xs = (np.arange(n) + 0.5) * 0.1
    X, Y = np.meshgrid(xs, xs)
    hazard = (X - 2.0) ** 2 + (Y - 2.0) ** 2 <= (0.3 + 0.15) ** 2
    grid[hazard] = CODE_HAZARD
    m = landing_metrics(make_landing_map(grid), t, eval_keepout_radius=0.15)
    assert m.recall == 1.0
    assert m.detection_rate == 1.0
    assert m.fp_rate == 0.0
    assert m.rocks_visible == 1


def test_landing_metrics_false_positive():
    t = generate_terrain(seed=3, extent=4.0, fractal_amplitude=0.0)
    t.rocks = np.array([[2.0, 2.0, 0.3]])
    t.fields = None
    t.__post_init__()
    n = 40
    grid = np.full((n, n), CODE_SAFE, dtype=np.uint8)  # everything safe: all hazards FP
    m = landing_metrics(make_landing_map(grid), t, eval_keepout_radius=0.15)
    assert m.fp_rate == 1.0
    assert m.detection_rate == 0.0
    assert m.recall < 1.0


def test_landing_metrics_excludes_border_and_unknown():
    t = generate_terrain(seed=3, extent=4.0, fractal_amplitude=0.0)
    t.rocks = np.array([[2.0, 2.0, 0.3], [0.7, 0.7, 0.3]])
    t.fields = None
    t.__post_init__()
    n = 40
    grid = np.full((n, n), CODE_SAFE, dtype=np.uint8)
    xs = (np.arange(n) + 0.5) * 0.1
    X, Y = np.meshgrid(xs, xs)
    hazard = (X - 2.0) ** 2 + (Y - 2.0) ** 2 <= 0.45**2
    grid[hazard] = CODE_HAZARD
    # one covering cell of the center rock is UNKNOWN: still detected
    grid[20, 20] = CODE_UNKNOWN
    # the second rock touches BORDER cells: excluded from the count
    border = (X - 0.7) ** 2 + (Y - 0.7) ** 2 <= 0.3**2
    grid[border] = CODE_BORDER
    m = landing_metrics(make_landing_map(grid), t, eval_keepout_radius=0.15)
    assert m.rocks_visible == 1
    assert m.detection_rate == 1.0
    assert m.rocks_excluded == 1
    # border cells never enter the cell rates
    assert m.cells_evaluated == int((grid != CODE_BORDER).sum())


def test_landing_metrics_no_rocks_reports_absent():
    t = generate_terrain(seed=3, extent=4.0, fractal_amplitude=0.0)
    grid = np.full((40, 40), CODE_SAFE, dtype=np.uint8)
    m = landing_metrics(make_landing_map(grid), t, eval_keepout_radius=0.15)
    assert m.detection_rate is None
    assert m.fp_rate is None
    assert m.recall == 1.0


def test_map_rmse_flat_noiseless_below_quantization():
    t = generate_terrain(seed=5, extent=6.0, slope_deg=2.0, fractal_amplitude=0.0)
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.3, 0.3))
    tan2 = math.tan(math.radians(2.0))
    fuse_surface(m, lambda x, y: tan2 * x, variance=1e-8, pin_level=False)
    out = map_rmse(m, t)
    assert out["FLAT"] is not None
    assert out["FLAT"] <= cfg.finest_resolution / 4.0
    assert out["ROCK"] is None
    assert out["CLIFF"] is None


def test_map_rmse_improves_with_observations():
    t = generate_terrain(seed=6, extent=6.0, slope_deg=0.0, fractal_amplitude=0.03)
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    m = PyramidMap(cfg, origin=(0.3, 0.3))
    from safeland.terrain import sample_heights

    def surface(x, y):
        return sample_heights(t, x, y)

    fuse_surface(m, surface, variance=1e-6, pin_level=False)
    first = map_rmse(m, t)["TOTAL"]
    for _ in range(3):
        fuse_surface(m, surface, variance=1e-6, pin_level=False)
    again = map_rmse(m, t)["TOTAL"]
    assert again <= first + 1e-12


def test_rockfield_table_formatting():
    from safeland.evalbench import RockfieldResult

    res = [
        RockfieldResult(0.3, True, [], 0.9, 1.0, 0.0, 0.0, 0.0, 0.0, 10),
        RockfieldResult(0.5, True, [], 0.8, 1.0, float("nan"), 0.0, 0.0, 0.0, 5),
    ]
    text = format_rockfield_table(None, res)
    assert "Rock Diameter" in text
    assert "Detection Rate M" in text
    assert "100.0" in text
    assert "n/a" in text


def test_check_gates():
    metrics = {"a": 0.5, "b": None}
    assert check_gates(metrics, ["a >= 0.4"]) == []
    assert check_gates(metrics, ["a >= 0.6"]) != []
    assert check_gates(metrics, ["a <= 0.4"]) != []
    assert check_gates(metrics, ["b >= 0.0"]) != []  # absent metric fails loudly
    assert check_gates(metrics, ["zzz >= 0"]) != []
    assert check_gates(metrics, ["a == 0.5"]) != []  # unsupported operator
    assert check_gates(metrics, ["# comment", "", "a >= 0.0"]) == []


def test_scenario_flight_plan_frame_count():
    scn = Scenario(frames=50)
    plan = scn.flight_plan(5.5, 0.0)
    assert plan.n_frames() == 50


def test_benchmark_memory_and_cells_small():
    # tiny bench run exercises the full path cheaply
    r = benchmark(frames=2, altitude=22.0, master_seed=1)
    assert r.cell_count == 52500
    assert r.map_memory_bytes <= 3 * 0.4e6
    assert r.frames == 2
    assert r.updates_per_frame > 10000
