"""Command-line interface.

Subcommands: simulate (terrain + flight -> range images + poses), fuse
(range images -> map dump), detect (map dump -> landing map), eval
(experiment harness), bench (runtime / memory benchmark). Every run is
driven by one flat config file plus --set key=value overrides; --check
turns eval/bench gate violations into a nonzero exit status.
"""

import argparse
import os
import sys

import numpy as np

from . import _kernels, config as cfgmod, evalbench, formats
from .detector import LandingConfig, detect
from .errors import SafelandError
from .mapping import MapConfig, PyramidMap, dump_map, fuse_stream, load_map
from .sensor import CameraModel, FlightPlan, Pose, fly, nadir_quat
from .terrain import generate_terrain


def _camera_from(cfg):
    return CameraModel(
        fov_x_deg=cfg["fov_x_deg"],
        image_width=cfg["image_width"],
        image_height=cfg["image_height"],
        disparity_noise_3sigma_px=cfg["disparity_noise_3sigma_px"],
        overlap_fraction=cfg["overlap_fraction"],
        ray_step=cfg["ray_step"],
    )


def _terrain_from(cfg, seed):
    cliff = None
    if cfg["cliff_x"] is not None:
        cliff = (cfg["cliff_x"], cfg["cliff_drop"])
    return generate_terrain(
        seed=seed,
        extent=cfg["extent"],
        slope_deg=cfg["slope_deg"],
        fractal_amplitude=cfg["fractal_amplitude"],
        fractal_roughness=cfg["fractal_roughness"],
        rock_diameter=cfg["rock_diameter"],
        rock_coverage=cfg["rock_coverage"],
        cliff=cliff,
        cliff_band=cfg["cliff_band"],
    )


def _write_terrain_meta(path, cfg, seed):
    keys = [
        "extent", "slope_deg", "fractal_amplitude", "fractal_roughness",
        "rock_diameter", "rock_coverage", "cliff_x", "cliff_drop", "cliff_band",
    ]
    with open(path, "w") as fh:
        fh.write("# terrain parameters for exact regeneration\n")
        fh.write("seed = %d\n" % seed)
        for k in keys:
            v = cfg[k]
            if v is None:
                continue
            fh.write("%s = %s\n" % (k, repr(float(v))))


def cmd_simulate(args):
    cfg = cfgmod.load_config(cfgmod.SIMULATE_SCHEMA, args.config, args.set or ())
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    terrain = _terrain_from(cfg, seed)
    camera = _camera_from(cfg)
    plan = FlightPlan(
        waypoints=cfg["waypoints"],
        speed=cfg["speed"],
        frame_rate=cfg["frame_rate"],
        camera_pitch_deg=cfg["camera_pitch_deg"],
    )
    poses = []
    for k, (pose, rimg) in enumerate(fly(terrain, plan, camera, seed=seed,
                                         noisy=cfg["noisy"])):
        formats.save_range_image(os.path.join(out, "frame_%06d.rimg" % k), rimg)
        poses.append(pose)
    formats.save_pose_log(os.path.join(out, "poses.txt"), poses)
    _write_terrain_meta(os.path.join(out, "terrain.meta"), cfg, seed)
    print("simulate: wrote %d frames to %s" % (len(poses), out))
    return 0


def cmd_fuse(args):
    cfg = cfgmod.load_config(cfgmod.FUSE_SCHEMA, args.config, args.set or ())
    frames_dir = cfg["frames_dir"] or args.input or "."
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    pose_path = os.path.join(frames_dir, "poses.txt")
    poses = formats.load_pose_log(pose_path)
    frame_files = sorted(
        f for f in os.listdir(frames_dir) if f.startswith("frame_") and f.endswith(".rimg")
    )
    if not frame_files:
        raise SafelandError("no frame_*.rimg files in %s" % frames_dir)
    if len(frame_files) != len(poses):
        raise SafelandError(
            "frame/pose count mismatch: %d frames vs %d poses"
            % (len(frame_files), len(poses))
        )
    times = [p.t for p in poses]
    if any(b < a for a, b in zip(times, times[1:])):
        raise SafelandError("pose log timestamps are not monotonically increasing")

    map_cfg = MapConfig(
        depth=cfg["depth"],
        finest_resolution=cfg["finest_resolution"],
        extent_cells=cfg["extent_cells"],
        disparity_error_px=cfg["disparity_error_px"],
    )
    # fusion only reads the FOV from the camera; footprints use each
    # frame's own pixel count
    camera = CameraModel(fov_x_deg=cfg["fov_x_deg"], image_width=2, image_height=2)
    if cfg["map_center"] is not None:
        center = cfg["map_center"]
        if len(center) != 2:
            raise SafelandError("map_center must be 'x,y'")
    else:
        center = (poses[0].position[0], poses[0].position[1])
    pyramid = PyramidMap.centered(map_cfg, center)

    def stream():
        for fname, pose in zip(frame_files, poses):
            yield pose, formats.load_range_image(os.path.join(frames_dir, fname))

    log = fuse_stream(pyramid, stream(), camera)
    dump_map(pyramid, os.path.join(out, "map"), timestamp=poses[-1].t)
    formats.export_map_pgms(pyramid, out)
    with open(os.path.join(out, "fuse_stats.csv"), "w") as fh:
        depth = map_cfg.depth
        cols = ",".join("updates_l%d" % l for l in range(1, depth + 1))
        fh.write("frame,timestamp,shift_rows,shift_cols,%s,rejected_invalid,"
                 "rejected_out_of_map,rejected_footprint\n" % cols)
        for k, (pose, shift, st) in enumerate(log):
            fh.write(
                "%d,%s,%d,%d,%s,%d,%d,%d\n"
                % (
                    k,
                    repr(pose.t),
                    shift[0],
                    shift[1],
                    ",".join(str(u) for u in st.updates_per_layer),
                    st.rejected_invalid,
                    st.rejected_out_of_map,
                    st.rejected_footprint,
                )
            )
    total = sum(st.total_updates for _, _, st in log)
    print("fuse: %d frames, %d cell updates, map dump in %s" % (len(log), total, out))
    return 0


def cmd_detect(args):
    cfg = cfgmod.load_config(cfgmod.DETECT_SCHEMA, args.config, args.set or ())
    map_dir = cfg["map_dir"] or args.input or "."
    if os.path.isdir(os.path.join(map_dir, "map")):
        map_dir = os.path.join(map_dir, "map")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    pyramid = load_map(map_dir)
    lc = LandingConfig(
        keepout_radius=cfg["keepout_radius"],
        safety_margin=cfg["safety_margin"],
        rock_area_radius=cfg["rock_area_radius"],
        max_slope_deg=cfg["max_slope_deg"],
        max_roughness=cfg["max_roughness_m"],
        min_observations=cfg["min_observations"],
        max_variance=cfg["max_variance"],
    )
    lm = detect(pyramid, lc, max_candidates=cfg["max_candidates"])
    formats.export_landing_pgm(os.path.join(out, "landing.pgm"), lm)
    formats.export_candidates_csv(os.path.join(out, "candidates.csv"), lm)
    n_safe = int((lm.class_grid == 255).sum())
    print(
        "detect: %d SAFE cells, %d candidates, exports in %s"
        % (n_safe, len(lm.candidates), out)
    )
    return 0


def _read_gates(path):
    with open(path) as fh:
        return fh.readlines()


def cmd_eval(args):
    cfg = cfgmod.load_config(cfgmod.EVAL_SCHEMA, args.config, args.set or ())
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    metrics = {}
    experiment = cfg["experiment"]
    if experiment == "rockfield":
        scenario = evalbench.Scenario(max_roughness=cfg["max_roughness_m"],
                                      eval_keepout_radius=cfg["eval_keepout_radius"],
                                      frames=cfg["frames"], noisy=cfg["noisy"])
        results = evalbench.run_rock_size_table(
            cfg["rock_diameters"], cfg["seeds"], scenario,
            with_margin=cfg["with_margin"], master_seed=seed,
        )
        evalbench.write_rockfield_report(results, os.path.join(out, "rockfield.csv"))
        plain = margin = None
        if cfg["with_margin"]:
            margin = results
        else:
            plain = results
        table = evalbench.format_rockfield_table(plain, margin)
        with open(os.path.join(out, "summary.txt"), "w") as fh:
            fh.write(table)
        print(table, end="")
        for r in results:
            metrics.update(r.metrics())
    elif experiment == "altitude_sweep":
        points = evalbench.run_altitude_sweep(cfg["altitudes"], seeds=cfg["seeds"],
                                              master_seed=seed)
        with open(os.path.join(out, "altitude_sweep.csv"), "w") as fh:
            fh.write("altitude_m,noisy,recall_mean,detection_mean\n")
            for p in points:
                fh.write("%.2f,%d,%.6f,%.6f\n"
                         % (p.altitude, int(p.noisy), p.mean_recall, p.mean_detection))
                metrics["recall_%s_%g" % ("noisy" if p.noisy else "clean", p.altitude)] = (
                    p.mean_recall
                )
        print("altitude sweep: %d points written" % len(points))
    elif experiment == "cliff_rmse":
        result = evalbench.run_cliff_experiment(master_seed=seed)
        with open(os.path.join(out, "cliff_rmse.csv"), "w") as fh:
            fh.write("t,rmse_flat,rmse_rock,rmse_cliff,rmse_total\n")
            for t, row in zip(result.times, result.rmse_series):
                fh.write("%s,%s,%s,%s,%s\n" % (
                    repr(t),
                    *("" if row[k] is None else repr(row[k])
                      for k in ("FLAT", "ROCK", "CLIFF", "TOTAL")),
                ))
        for k in ("FLAT", "ROCK", "CLIFF", "TOTAL"):
            metrics["rmse_steady_%s" % k.lower()] = result.steady_state(k)
            metrics["rmse_before_%s" % k.lower()] = result.before_cliff(k)
        print("cliff run: %d frames logged" % len(result.times))
    else:
        raise SafelandError("unknown experiment %r" % experiment)

    if args.check:
        gates = _read_gates(cfg["gates"]) if cfg["gates"] else _default_gates(experiment)
        failures = evalbench.check_gates(metrics, gates)
        for f in failures:
            print("CHECK FAIL: %s" % f, file=sys.stderr)
        if failures:
            return 1
        print("check: all gates passed")
    return 0


def _default_gates(experiment):
    if experiment == "rockfield":
        return [
            "detection_M_0.30 >= 1.0",
            "detection_M_0.40 >= 1.0",
            "detection_M_0.50 >= 1.0",
            "detection_M_1.00 >= 1.0",
            "detection_M_0.20 >= 0.9",
            "detection_M_0.10 <= 0.6",
            "fp_M_0.20 <= 0.001",
            "fp_M_0.30 <= 0.001",
            "fp_M_0.40 <= 0.001",
            "fp_M_0.50 <= 0.001",
            "fp_M_1.00 <= 0.001",
        ]
    if experiment == "altitude_sweep":
        return ["recall_noisy_15 <= 1.0"]
    if experiment == "cliff_rmse":
        return ["rmse_steady_total <= 3.0"]
    return []


def cmd_bench(args):
    cfg = cfgmod.load_config(cfgmod.BENCH_SCHEMA, args.config, args.set or ())
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    which = cfg["backend"]
    if which == "both":
        backends = _kernels.available_backends()
    elif which == "auto":
        backends = [_kernels.BACKEND]
    else:
        backends = [which]
    results = [
        evalbench.benchmark(frames=cfg["frames"], altitude=cfg["altitude"],
                            master_seed=seed, backend=b)
        for b in backends
    ]
    with open(os.path.join(out, "bench.csv"), "w") as fh:
        fh.write("backend,frames,fuse_ms_median,fuse_ms_sigma,detect_ms_median,"
                 "detect_ms_sigma,updates_per_frame,map_memory_bytes,cell_count\n")
        for r in results:
            fh.write("%s,%d,%.3f,%.3f,%.3f,%.3f,%.1f,%d,%d\n" % (
                r.backend, r.frames, r.fuse_ms_median, r.fuse_ms_sigma,
                r.detect_ms_median, r.detect_ms_sigma, r.updates_per_frame,
                r.map_memory_bytes, r.cell_count))
    for r in results:
        print(
            "bench[%s]: fuse %.1f ms (sigma %.2f), detect %.1f ms (sigma %.2f), "
            "%.0f updates/frame, map %.2f MB"
            % (r.backend, r.fuse_ms_median, r.fuse_ms_sigma, r.detect_ms_median,
               r.detect_ms_sigma, r.updates_per_frame, r.map_memory_bytes / 1e6)
        )
    if len(results) == 2:
        ordered = sorted(results, key=lambda r: r.fuse_ms_median)
        print("bench: %s fuse is %.1fx faster than %s"
              % (ordered[0].backend, ordered[1].fuse_ms_median / max(ordered[0].fuse_ms_median, 1e-9),
                 ordered[1].backend))
    if args.check:
        metrics = results[0].metrics()
        gates = _read_gates(cfg["gates"]) if cfg["gates"] else [
            "fuse_ms_median <= 50.0",
            "detect_ms_median <= 60.0",
            "updates_per_frame >= 47250",
            "updates_per_frame <= 57750",
            "map_memory_bytes <= 1200000",
        ]
        failures = evalbench.check_gates(metrics, gates)
        for f in failures:
            print("CHECK FAIL: %s" % f, file=sys.stderr)
        if failures:
            return 1
        print("check: all gates passed")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="safeland",
        description="Multi-resolution elevation mapping and safe landing site "
        "detection (simulation, fusion, detection, evaluation).",
    )
    p.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, needs_input in (
        ("simulate", cmd_simulate, False),
        ("fuse", cmd_fuse, True),
        ("detect", cmd_detect, True),
        ("eval", cmd_eval, False),
        ("bench", cmd_bench, False),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output directory (default: cwd)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--check", action="store_true",
                        help="compare results against gates; nonzero exit on failure")
        if needs_input:
            sp.add_argument("--in", dest="input", help="input directory")
        sp.set_defaults(fn=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SafelandError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
