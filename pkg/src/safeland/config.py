"""Flat key = value run configuration files.

One file configures one CLI run. Lines are ``key = value`` with ``#``
comments; keys are validated against the subcommand's schema and unknown
keys are errors (typos must not silently fall back to defaults). Values
are scalars, comma-separated number lists, or semicolon-separated
``x,y,z`` waypoint lists.
"""

from dataclasses import dataclass

from .errors import ConfigError


def _parse_bool(raw, key):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError("key %r: cannot parse %r as bool" % (key, raw))


def _parse_floats(raw, key):
    try:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError("key %r: cannot parse %r as float list" % (key, raw)) from exc


def _parse_waypoints(raw, key):
    pts = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = _parse_floats(part, key)
        if len(vals) != 3:
            raise ConfigError("key %r: waypoint %r is not x,y,z" % (key, part))
        pts.append(vals)
    if not pts:
        raise ConfigError("key %r: no waypoints given" % key)
    return tuple(pts)


_PARSERS = {
    "int": lambda raw, key: int(raw),
    "float": lambda raw, key: float(raw),
    "str": lambda raw, key: raw,
    "bool": _parse_bool,
    "floats": _parse_floats,
    "waypoints": _parse_waypoints,
}

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    name: str
    type: str
    default: object
    help: str = ""


class Schema:
    """Typed key set for one subcommand's configuration."""

    def __init__(self, name, keys):
        self.name = name
        self.keys = {k.name: k for k in keys}

    def parse(self, pairs):
        """Validate raw string pairs into a dict with defaults applied."""
        out = {}
        for key, raw in pairs.items():
            spec = self.keys.get(key)
            if spec is None:
                known = ", ".join(sorted(self.keys))
                raise ConfigError(
                    "unknown config key %r for %s (known keys: %s)" % (key, self.name, known)
                )
            try:
                out[key] = _PARSERS[spec.type](raw, key)
            except (ValueError, TypeError) as exc:
                raise ConfigError("key %r: bad value %r" % (key, raw)) from exc
        for key, spec in self.keys.items():
            if key not in out:
                if spec.default is REQUIRED:
                    raise ConfigError("missing required config key %r for %s" % (key, self.name))
                out[key] = spec.default
        return out


def read_pairs(path):
    """Read raw key = value pairs from a config file."""
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError("%s:%d: expected 'key = value'" % (path, lineno))
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.split("#", 1)[0].strip()
            if key in pairs:
                raise ConfigError("%s:%d: duplicate key %r" % (path, lineno, key))
            pairs[key] = raw
    return pairs


def load_config(schema, path=None, overrides=()):
    """Parse a config file plus command-line key=value overrides (flags win)."""
    pairs = read_pairs(path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not key=value" % item)
        key, _, raw = item.partition("=")
        pairs[key.strip()] = raw.strip()
    return schema.parse(pairs)


_TERRAIN_KEYS = [
    Key("seed", "int", 0, "master seed for terrain and sensor noise"),
    Key("extent", "float", 20.0, "square terrain side length (m)"),
    Key("slope_deg", "float", 0.0, "base plane inclination along +x (deg)"),
    Key("fractal_amplitude", "float", 0.05, "RMS of the fractal component (m)"),
    Key("fractal_roughness", "float", 0.9, "midpoint-displacement roughness exponent"),
    Key("rock_diameter", "float", 0.0, "half-sphere rock diameter (m)"),
    Key("rock_coverage", "float", 0.0, "fraction of surface covered by rocks"),
    Key("cliff_x", "float", None, "cliff edge position (m), omit for none"),
    Key("cliff_drop", "float", 5.0, "cliff drop height (m)"),
    Key("cliff_band", "float", 0.6, "cliff class band for evaluation (m)"),
]

_CAMERA_KEYS = [
    Key("fov_x_deg", "float", 90.0, "horizontal field of view (deg)"),
    Key("image_width", "int", 640, "image width (px)"),
    Key("image_height", "int", 480, "image height (px)"),
    Key("disparity_noise_3sigma_px", "float", 0.25, "3-sigma disparity error (px)"),
    Key("overlap_fraction", "float", 0.8, "stereo pair image overlap fraction"),
    Key("ray_step", "float", 0.04, "ray march step (m)"),
]

_MAP_KEYS = [
    Key("depth", "int", 3, "pyramid layer count"),
    Key("finest_resolution", "float", 0.08, "finest cell size (m)"),
    Key("extent_cells", "int", 200, "finest cells per side"),
    Key("disparity_error_px", "float", 0.25, "expected disparity error (px)"),
]

_DETECTOR_KEYS = [
    Key("keepout_radius", "float", 0.5, "UAV keep-out radius (m)"),
    Key("safety_margin", "float", 0.1, "extra margin around the keep-out (m)"),
    Key("rock_area_radius", "float", 0.5, "first roughness check radius (m)"),
    Key("max_slope_deg", "float", 10.0, "slope threshold (deg)"),
    Key("max_roughness_m", "float", 0.1, "roughness threshold (m)"),
    Key("min_observations", "int", 3, "confidence: minimum observations"),
    Key("max_variance", "float", None, "confidence: max variance (m^2); default (2*res)^2"),
]

SIMULATE_SCHEMA = Schema(
    "simulate",
    _TERRAIN_KEYS
    + _CAMERA_KEYS
    + [
        Key("waypoints", "waypoints", REQUIRED, "flight waypoints 'x,y,z; x,y,z; ...'"),
        Key("speed", "float", 1.0, "flight speed (m/s)"),
        Key("frame_rate", "float", 2.0, "frames per second"),
        Key("camera_pitch_deg", "float", 0.0, "camera pitch from nadir (deg)"),
        Key("noisy", "bool", True, "apply disparity noise"),
    ],
)

FUSE_SCHEMA = Schema(
    "fuse",
    _MAP_KEYS
    + [
        Key("fov_x_deg", "float", 90.0, "camera horizontal FOV for footprints (deg)"),
        Key("frames_dir", "str", None, "input directory (defaults to --out of simulate)"),
        Key("map_center", "floats", None, "fixed map center 'x,y'; default under first pose"),
    ],
)

DETECT_SCHEMA = Schema(
    "detect",
    _DETECTOR_KEYS
    + [
        Key("map_dir", "str", None, "map dump directory (defaults to input)"),
        Key("max_candidates", "int", 32, "maximum candidates to export"),
    ],
)

EVAL_SCHEMA = Schema(
    "eval",
    [
        Key("experiment", "str", "rockfield", "rockfield | altitude_sweep | cliff_rmse"),
        Key("seed", "int", 0, "master seed"),
        Key("seeds", "int", 8, "number of flights per configuration"),
        Key("rock_diameters", "floats", (0.1, 0.2, 0.3, 0.4, 0.5, 1.0), "rock sizes (m)"),
        Key("altitudes", "floats", (5.0, 15.0), "altitudes for the sweep (m)"),
        Key("cell_sizes", "floats", (0.06,), "finest cell sizes to evaluate (m)"),
        Key("frames", "int", 50, "frames per flight"),
        Key("with_margin", "bool", True, "enable the safety margin"),
        Key("noisy", "bool", True, "apply disparity noise"),
        Key("eval_keepout_radius", "float", 0.3, "keep-out radius used for ground truth (m)"),
        Key("max_roughness_m", "float", 0.06, "detector roughness threshold (m)"),
        Key("gates", "str", None, "gate file for --check mode"),
    ],
)

BENCH_SCHEMA = Schema(
    "bench",
    [
        Key("seed", "int", 0, "master seed"),
        Key("frames", "int", 60, "frames to time"),
        Key("altitude", "float", 22.0, "camera altitude AGL (m)"),
        Key("backend", "str", "auto", "auto | compiled | python | both"),
        Key("gates", "str", None, "gate file for --check mode"),
    ],
)
