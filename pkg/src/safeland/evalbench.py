"""Quantitative evaluation harness.

Reproduces the reference experiments at desk scale: rock-field landing
detection rates across rock sizes and cell sizes, the altitude sweep, the
cliff-crossing map-accuracy run, and the runtime / memory benchmark. All
experiments are deterministic in their master seed; flights across seeds
are independent worlds.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .detector import (
    CODE_BORDER,
    CODE_HAZARD,
    CODE_NO_DATA,
    CODE_SAFE,
    CODE_UNKNOWN,
    LandingConfig,
    detect,
)
from .mapping import MapConfig, PyramidMap, fuse_stream
from .sensor import CameraModel, FlightPlan, fly
from .terrain import CLIFF, FLAT, ROCK, classify_points, generate_terrain, sample_heights


@dataclass(frozen=True)
class Scenario:
    """One synthetic flight configuration (terrain + sensor + map + detector)."""

    terrain_extent: float = 20.0
    slope_deg: float = 5.0
    fractal_amplitude: float = 0.015
    fractal_roughness: float = 0.9
    rock_diameter: float = 0.3
    rock_coverage: float = 0.2
    cliff: tuple | None = None

    fov_x_deg: float = 90.0
    image_width: int = 240
    image_height: int = 180
    disparity_noise_3sigma_px: float = 0.25
    overlap_fraction: float = 0.8
    ray_step: float = 0.03

    altitude_lo: float = 5.0
    altitude_hi: float = 6.0
    speed: float = 0.4
    frame_rate: float = 5.0
    frames: int = 50

    map_depth: int = 3
    finest_resolution: float = 0.06
    extent_cells: int = 192

    keepout_radius: float = 0.5
    safety_margin: float = 0.1
    rock_area_radius: float = 0.5
    max_slope_deg: float = 10.0
    max_roughness: float = 0.06
    min_observations: int = 3

    eval_keepout_radius: float = 0.3
    noisy: bool = True

    def camera(self):
        return CameraModel(
            fov_x_deg=self.fov_x_deg,
            image_width=self.image_width,
            image_height=self.image_height,
            disparity_noise_3sigma_px=self.disparity_noise_3sigma_px,
            overlap_fraction=self.overlap_fraction,
            ray_step=self.ray_step,
        )

    def map_config(self):
        return MapConfig(
            depth=self.map_depth,
            finest_resolution=self.finest_resolution,
            extent_cells=self.extent_cells,
            disparity_error_px=self.disparity_noise_3sigma_px,
        )

    def landing_config(self, with_margin=True):
        return LandingConfig(
            keepout_radius=self.keepout_radius,
            safety_margin=self.safety_margin if with_margin else 0.0,
            rock_area_radius=self.rock_area_radius,
            max_slope_deg=self.max_slope_deg,
            max_roughness=self.max_roughness,
            min_observations=self.min_observations,
        )

    def flight_plan(self, altitude, ground_z):
        """Straight along-track (+y) traverse across the terrain center."""
        x = self.terrain_extent / 2.0
        length = (self.frames - 1) * self.speed / self.frame_rate
        y0 = self.terrain_extent / 2.0 - length / 2.0
        z = ground_z + altitude
        return FlightPlan(
            waypoints=((x, y0, z), (x, y0 + length, z)),
            speed=self.speed,
            frame_rate=self.frame_rate,
        )


@dataclass
class LandingMetrics:
    """Recall / detection / false-positive rates of one landing map."""

    recall: float | None
    detection_rate: float | None
    fp_rate: float | None
    rocks_visible: int
    rocks_detected: int
    rocks_excluded: int
    cells_evaluated: int


def _spawn_rngs(master_seed, n):
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(master_seed).spawn(n)]


def run_flight(terrain, plan, camera, map_config, noise_seed, noisy=True, on_frame=None):
    """Fly the plan, fusing every frame; returns (map, frame log)."""
    start = plan.position_at(0.0)
    pyramid = PyramidMap.centered(map_config, (start[0], start[1]))
    stream = fly(terrain, plan, camera, seed=noise_seed, noisy=noisy)
    log = fuse_stream(pyramid, stream, camera, on_frame=on_frame)
    return pyramid, log


# ---------------------------------------------------------------------------
# map accuracy


def map_rmse(pyramid_or_snapshot, terrain, cliff_band=None):
    """RMSE of the reconstructed map per terrain class.

    Evaluated over observed finest cells inside the terrain extent, at each
    cell's deepest resolved level, against the analytic surface at the cell
    center. Returns {"FLAT": m, "ROCK": m, "CLIFF": m, "TOTAL": m}; classes
    with no cells report None.
    """
    snap = pyramid_or_snapshot if hasattr(pyramid_or_snapshot, "reconstruct_grid") else None
    snap = pyramid_or_snapshot.snapshot() if snap is None else pyramid_or_snapshot
    heights, _ = snap.reconstruct_grid()
    xs, ys = snap.fine_cell_centers()
    X, Y = np.meshgrid(xs, ys)
    ex, ey = terrain.extent
    ok = np.isfinite(heights) & (X >= 0) & (X <= ex) & (Y >= 0) & (Y <= ey)
    out = {"FLAT": None, "ROCK": None, "CLIFF": None, "TOTAL": None}
    if not np.any(ok):
        return out
    truth = sample_heights(terrain, X[ok], Y[ok])
    err = heights[ok] - truth
    cls = classify_points(terrain, X[ok], Y[ok], cliff_band)
    for code, name in ((FLAT, "FLAT"), (ROCK, "ROCK"), (CLIFF, "CLIFF")):
        sel = cls == code
        if np.any(sel):
            out[name] = float(np.sqrt(np.mean(err[sel] ** 2)))
    out["TOTAL"] = float(np.sqrt(np.mean(err**2)))
    return out


# ---------------------------------------------------------------------------
# landing metrics


def landing_metrics(landing_map, terrain, eval_keepout_radius, max_slope_deg=None):
    """Score a landing map against the analytic ground truth.

    A cell's true label is HAZARD iff its center lies within the evaluation
    keep-out radius of a rock disc (or of the cliff edge). BORDER and
    NO_DATA cells are excluded. A rock is visible when it has covering
    in-map cells with a conclusive class (SAFE or HAZARD); it is detected
    when all of those are HAZARD. Covering cells without a conclusion
    (UNKNOWN) are excluded from the requirement like the border band is,
    and rocks touching BORDER or NO_DATA cells leave the count entirely.
    """
    from .terrain import near_rock_mask

    grid = landing_map.class_grid
    n = grid.shape[0]
    res = landing_map.resolution
    xs = landing_map.origin[0] + (np.arange(n) + 0.5) * res
    ys = landing_map.origin[1] + (np.arange(n) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    ex, ey = terrain.extent
    in_terrain = (X >= 0) & (X <= ex) & (Y >= 0) & (Y <= ey)
    evaluated = in_terrain & (
        (grid == CODE_SAFE) | (grid == CODE_HAZARD) | (grid == CODE_UNKNOWN)
    )
    true_hazard = near_rock_mask(terrain, X, Y, margin=eval_keepout_radius)
    if terrain.cliff is not None:
        true_hazard |= np.abs(X - terrain.cliff[0]) <= eval_keepout_radius
    pred_safe = grid == CODE_SAFE
    correct = np.where(true_hazard, ~pred_safe, pred_safe)

    n_eval = int(evaluated.sum())
    recall = float(np.mean(correct[evaluated])) if n_eval else None
    th = true_hazard & evaluated
    fp_rate = float((pred_safe & th).sum() / th.sum()) if th.sum() else None

    visible = detected = excluded = 0
    for cx, cy, r in terrain.rocks:
        c0 = int(math.floor((cx - r - landing_map.origin[0]) / res))
        c1 = int(math.ceil((cx + r - landing_map.origin[0]) / res)) + 1
        r0 = int(math.floor((cy - r - landing_map.origin[1]) / res))
        r1 = int(math.ceil((cy + r - landing_map.origin[1]) / res)) + 1
        c0, c1 = max(c0, 0), min(c1, n)
        r0, r1 = max(r0, 0), min(r1, n)
        if c0 >= c1 or r0 >= r1:
            continue
        sub_x = xs[c0:c1][None, :]
        sub_y = ys[r0:r1][:, None]
        cover = (sub_x - cx) ** 2 + (sub_y - cy) ** 2 <= r * r
        if not np.any(cover):
            continue
        cls = grid[r0:r1, c0:c1][cover]
        if np.any((cls == CODE_BORDER) | (cls == CODE_NO_DATA)):
            excluded += 1
            continue
        conclusive = cls[cls != CODE_UNKNOWN]
        if conclusive.size == 0:
            excluded += 1
            continue
        visible += 1
        if np.all(conclusive == CODE_HAZARD):
            detected += 1
    detection = (detected / visible) if visible else None
    return LandingMetrics(
        recall=recall,
        detection_rate=detection,
        fp_rate=fp_rate,
        rocks_visible=visible,
        rocks_detected=detected,
        rocks_excluded=excluded,
        cells_evaluated=n_eval,
    )


# ---------------------------------------------------------------------------
# experiments


@dataclass
class RockfieldResult:
    rock_diameter: float
    with_margin: bool
    per_seed: list
    mean_recall: float
    mean_detection: float
    mean_fp: float
    std_recall: float
    std_detection: float
    std_fp: float
    rocks_visible: int

    def metrics(self):
        suffix = "M" if self.with_margin else "P"
        d = self.rock_diameter
        return {
            "recall_%s_%.2f" % (suffix, d): self.mean_recall,
            "detection_%s_%.2f" % (suffix, d): self.mean_detection,
            "fp_%s_%.2f" % (suffix, d): self.mean_fp,
        }


def _aggregate(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals))


def run_rockfield_experiment(rock_diameter, seeds, scenario=None, with_margin=True,
                             master_seed=0):
    """Fly `seeds` independent rock fields of one rock size and score them."""
    scenario = scenario or Scenario()
    scenario = replace(scenario, rock_diameter=rock_diameter)
    camera = scenario.camera()
    map_cfg = scenario.map_config()
    lc = scenario.landing_config(with_margin)
    per_seed = []
    for children in _seed_children(master_seed, rock_diameter, seeds):
        terrain_seed, noise_seed, alt_rng = children
        terrain = generate_terrain(
            seed=terrain_seed,
            extent=scenario.terrain_extent,
            slope_deg=scenario.slope_deg,
            fractal_amplitude=scenario.fractal_amplitude,
            fractal_roughness=scenario.fractal_roughness,
            rock_diameter=scenario.rock_diameter,
            rock_coverage=scenario.rock_coverage,
            cliff=scenario.cliff,
        )
        altitude = scenario.altitude_lo + alt_rng.random() * (
            scenario.altitude_hi - scenario.altitude_lo
        )
        x_mid = scenario.terrain_extent / 2.0
        ground_z = float(terrain.fields.slope_tan * x_mid)
        plan = scenario.flight_plan(altitude, ground_z)
        pyramid, _ = run_flight(terrain, plan, camera, map_cfg, noise_seed,
                                noisy=scenario.noisy)
        lm = detect(pyramid, lc)
        per_seed.append(landing_metrics(lm, terrain, scenario.eval_keepout_radius))
    mean_r, std_r = _aggregate([m.recall for m in per_seed])
    mean_d, std_d = _aggregate([m.detection_rate for m in per_seed])
    mean_f, std_f = _aggregate([m.fp_rate for m in per_seed])
    return RockfieldResult(
        rock_diameter=rock_diameter,
        with_margin=with_margin,
        per_seed=per_seed,
        mean_recall=mean_r,
        mean_detection=mean_d,
        mean_fp=mean_f,
        std_recall=std_r,
        std_detection=std_d,
        std_fp=std_f,
        rocks_visible=int(sum(m.rocks_visible for m in per_seed)),
    )


def _seed_children(master_seed, salt, n_seeds):
    """Deterministic (terrain_seed, noise_seed, altitude_rng) per flight."""
    # include the salt (e.g. rock diameter) so experiment arms are independent
    base = np.random.SeedSequence([master_seed, int(round(salt * 1000))])
    out = []
    for child in base.spawn(n_seeds):
        t, s, a = child.spawn(3)
        out.append((
            int(t.generate_state(1, np.uint32)[0]),
            int(s.generate_state(1, np.uint32)[0]),
            np.random.Generator(np.random.PCG64(a)),
        ))
    return out


def run_rock_size_table(rock_diameters, seeds, scenario=None, with_margin=True,
                        master_seed=0):
    """Rock-size sweep at one map resolution (the Table-I style experiment)."""
    return [
        run_rockfield_experiment(d, seeds, scenario, with_margin, master_seed)
        for d in rock_diameters
    ]


def run_cell_size_table(cell_sizes, rock_diameters, seeds, scenario=None, master_seed=0):
    """Detection rate per (finest cell size, rock size) grid (Table-II style).

    The camera/altitude pairing keeps the pixel footprint below the finest
    cell so level-of-detail stays constant across the sweep.
    """
    scenario = scenario or Scenario()
    out = {}
    for cs in cell_sizes:
        cells = int(round(11.5 / cs / 4.0)) * 4
        if cs <= 0.04:
            scn = replace(scenario, finest_resolution=cs, extent_cells=cells,
                          image_width=288, image_height=216,
                          altitude_lo=4.0, altitude_hi=4.3)
        else:
            scn = replace(scenario, finest_resolution=cs, extent_cells=cells)
        for d in rock_diameters:
            res = run_rockfield_experiment(d, seeds, scn, True, master_seed)
            out[(cs, d)] = res
    return out


@dataclass
class SweepPoint:
    altitude: float
    noisy: bool
    mean_recall: float
    mean_detection: float


def run_altitude_sweep(altitudes, seeds=4, scenario=None, master_seed=0,
                       noise_settings=(True, False)):
    """Recall / detection vs altitude, with and without sensor noise.

    Runs a sparse rock field with a tight roughness threshold so that the
    altitude-dependent stereo noise is the dominant effect, as in the
    reference flights; the camera is wide enough that the level of detail
    does not change across the sweep.
    """
    scenario = scenario or Scenario(
        rock_coverage=0.03,
        fractal_amplitude=0.01,
        max_roughness=0.03,
        image_width=512,
        image_height=384,
        speed=2.5,
        frame_rate=2.0,
        frames=16,
    )
    out = []
    for noisy in noise_settings:
        for alt in altitudes:
            scn = replace(scenario, altitude_lo=alt, altitude_hi=alt, noisy=noisy)
            results = run_rockfield_experiment(
                scenario.rock_diameter, seeds, scn, True, master_seed
            )
            out.append(
                SweepPoint(
                    altitude=alt,
                    noisy=noisy,
                    mean_recall=results.mean_recall,
                    mean_detection=results.mean_detection,
                )
            )
    return out


@dataclass
class CliffRunResult:
    times: list
    rmse_series: list  # dict per frame
    crossing_time: float

    def steady_state(self, key, tail=8):
        vals = [r[key] for r in self.rmse_series[-tail:] if r[key] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def before_cliff(self, key, head=8):
        vals = [r[key] for r in self.rmse_series[:head] if r[key] is not None]
        return float(np.mean(vals)) if vals else float("nan")


def run_cliff_experiment(scenario=None, master_seed=0):
    """Fly across a cliff at constant world altitude, logging per-frame RMSE.

    Before the cliff the AGL keeps fusion in the finest layer; past the
    edge the footprint doubles and fusion stops short of it, raising the
    reconstruction error exactly as in the reference run.
    """
    scenario = scenario or Scenario(
        slope_deg=-2.0,
        rock_diameter=0.3,
        rock_coverage=0.10,
        fractal_amplitude=0.02,
        cliff=(12.0, 5.0),
        image_width=240,
        image_height=180,
        map_depth=3,
        finest_resolution=0.08,
        extent_cells=160,
        speed=1.0,
        frame_rate=2.5,
        frames=36,
    )
    terrain_seed, noise_seed, _ = _seed_children(master_seed, 0.0, 1)[0]
    terrain = generate_terrain(
        seed=terrain_seed,
        extent=scenario.terrain_extent,
        slope_deg=scenario.slope_deg,
        fractal_amplitude=scenario.fractal_amplitude,
        rock_diameter=scenario.rock_diameter,
        rock_coverage=scenario.rock_coverage,
        cliff=scenario.cliff,
        cliff_band=scenario.keepout_radius + scenario.safety_margin,
    )
    camera = scenario.camera()
    # fly along +x (across the cliff) at constant world altitude, 5 m AGL at start
    length = (scenario.frames - 1) * scenario.speed / scenario.frame_rate
    x0 = 4.0
    y_mid = scenario.terrain_extent / 2.0
    from .terrain import sample_height

    z = sample_height(terrain, x0, y_mid) + scenario.altitude_lo
    plan = FlightPlan(
        waypoints=((x0, y_mid, z), (x0 + length, y_mid, z)),
        speed=scenario.speed,
        frame_rate=scenario.frame_rate,
    )
    times = []
    series = []

    def on_frame(pyramid, pose, stats):
        times.append(pose.t)
        series.append(map_rmse(pyramid, terrain))

    run_flight(terrain, plan, camera, scenario.map_config(), noise_seed,
               noisy=scenario.noisy, on_frame=on_frame)
    crossing_time = (scenario.cliff[0] - x0) / scenario.speed if scenario.cliff else None
    return CliffRunResult(times=times, rmse_series=series, crossing_time=crossing_time)


# ---------------------------------------------------------------------------
# runtime / memory benchmark


@dataclass
class BenchResult:
    backend: str
    frames: int
    fuse_ms_median: float
    fuse_ms_sigma: float
    detect_ms_median: float
    detect_ms_sigma: float
    updates_per_frame: float
    map_memory_bytes: int
    cell_count: int

    def metrics(self):
        return {
            "fuse_ms_median": self.fuse_ms_median,
            "detect_ms_median": self.detect_ms_median,
            "updates_per_frame": self.updates_per_frame,
            "map_memory_bytes": float(self.map_memory_bytes),
        }


def benchmark(frames=60, altitude=22.0, master_seed=0, backend=None):
    """Time per-frame fusion and detection on the reference configuration.

    VGA range images over a 16 m x 16 m, 3-layer, 8 cm map; the altitude
    puts roughly 52,500 cell updates into each frame. Rendering is excluded
    from the timings.
    """
    if backend is not None:
        impl = _kernels.get_impl(backend)
        saved = {n: getattr(_kernels, n) for n in
                 ("terrain_heights", "raycast", "fuse_points", "plane_fit_grid",
                  "disc_max_exceeds")}
        for n in saved:
            setattr(_kernels, n, getattr(impl, n))
    else:
        backend = _kernels.BACKEND
        saved = None
    try:
        terrain = generate_terrain(
            seed=master_seed + 99000,
            extent=70.0,
            slope_deg=0.0,
            fractal_amplitude=0.05,
        )
        camera = CameraModel(fov_x_deg=110.0, image_width=640, image_height=480,
                             disparity_noise_3sigma_px=0.25)
        cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=200)
        length = max((frames - 1) * 0.05, 0.5)
        plan = FlightPlan(
            waypoints=((35.0, 35.0 - length / 2.0, altitude),
                       (35.0, 35.0 + length / 2.0, altitude)),
            speed=0.1,
            frame_rate=2.0,
        )
        lc = LandingConfig(keepout_radius=0.5, safety_margin=0.1, rock_area_radius=0.5,
                           max_slope_deg=10.0, max_roughness=0.1, min_observations=3)
        pyramid = PyramidMap.centered(cfg, (35.0, 35.0 - length / 2.0))
        fuse_ms = []
        detect_ms = []
        updates = []
        count = 0
        from .mapping import measurement_halfwidth

        for pose, rimg in fly(terrain, plan, camera, seed=master_seed):
            if count >= frames:
                break
            hw = measurement_halfwidth(rimg, pose)
            pyramid.recenter(pose.position, coverage_halfwidth=hw)
            t0 = time.perf_counter()
            stats = pyramid.fuse_range_image(rimg, pose, camera)
            t1 = time.perf_counter()
            lm = detect(pyramid, lc)
            t2 = time.perf_counter()
            fuse_ms.append((t1 - t0) * 1e3)
            detect_ms.append((t2 - t1) * 1e3)
            updates.append(stats.total_updates)
            count += 1
        return BenchResult(
            backend=backend,
            frames=count,
            fuse_ms_median=float(np.median(fuse_ms)),
            fuse_ms_sigma=float(np.std(fuse_ms)),
            detect_ms_median=float(np.median(detect_ms)),
            detect_ms_sigma=float(np.std(detect_ms)),
            updates_per_frame=float(np.mean(updates)),
            map_memory_bytes=pyramid.memory_bytes(),
            cell_count=cfg.total_cells,
        )
    finally:
        if saved is not None:
            for n, fn in saved.items():
                setattr(_kernels, n, fn)


# ---------------------------------------------------------------------------
# report writing


def write_rockfield_report(results, out_path):
    """CSV of rock-size sweep results (one row per diameter and margin arm)."""
    with open(out_path, "w") as fh:
        fh.write(
            "rock_diameter_m,with_margin,recall_mean,recall_std,"
            "detection_mean,detection_std,fp_mean,fp_std,rocks_visible,seeds\n"
        )
        for r in results:
            fh.write(
                "%.3f,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%d\n"
                % (
                    r.rock_diameter,
                    int(r.with_margin),
                    r.mean_recall,
                    r.std_recall,
                    r.mean_detection,
                    r.std_detection,
                    r.mean_fp,
                    r.std_fp,
                    r.rocks_visible,
                    len(r.per_seed),
                )
            )


def format_rockfield_table(results_plain, results_margin):
    """Plain-text summary mirroring the reference table's row structure."""
    diameters = [r.rock_diameter for r in results_margin or results_plain]
    lines = []
    header = "Rock Diameter [m]    " + "".join("%8.2f" % d for d in diameters)
    lines.append(header)
    lines.append("-" * len(header))

    def row(label, values):
        return label.ljust(21) + "".join(
            "%8s" % ("n/a" if v is None or math.isnan(v) else "%.1f" % (100.0 * v))
            for v in values
        )

    if results_plain:
        lines.append(row("Recall Rate [%]", [r.mean_recall for r in results_plain]))
        lines.append(row("Detection Rate [%]", [r.mean_detection for r in results_plain]))
        lines.append(row("False Pos. Rate [%]", [r.mean_fp for r in results_plain]))
    if results_margin:
        lines.append(row("Recall Rate M [%]", [r.mean_recall for r in results_margin]))
        lines.append(row("Detection Rate M [%]", [r.mean_detection for r in results_margin]))
        lines.append(row("False Pos. Rate M [%]", [r.mean_fp for r in results_margin]))
    return "\n".join(lines) + "\n"


def check_gates(metrics, gate_lines):
    """Evaluate 'name <= value' / 'name >= value' gates against a metric dict.

    Returns a list of failure strings (empty = all passing).
    """
    failures = []
    for raw in gate_lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for op in ("<=", ">="):
            if op in line:
                name, _, bound = line.partition(op)
                name = name.strip()
                bound = float(bound.strip())
                if name not in metrics:
                    failures.append("gate %r: unknown metric" % name)
                    break
                val = metrics[name]
                if val is None or (isinstance(val, float) and math.isnan(val)):
                    failures.append("gate %r: metric has no value" % name)
                elif op == "<=" and not val <= bound:
                    failures.append("gate %s <= %g failed: measured %.6g" % (name, bound, val))
                elif op == ">=" and not val >= bound:
                    failures.append("gate %s >= %g failed: measured %.6g" % (name, bound, val))
                break
        else:
            failures.append("gate line %r: expected 'name <= value' or 'name >= value'" % raw)
    return failures
