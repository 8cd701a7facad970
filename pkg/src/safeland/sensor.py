"""Stereo-derived range sensor simulation.

Renders pose-tagged range images by casting per-pixel rays onto the
analytic terrain, then corrupting the recovered depth in disparity space:
true disparity is computed from an altitude-dependent stereo baseline,
Gaussian noise is added to the disparity, and the noisy depth is
back-projected along the pixel ray. Per-point height variances follow the
stereo error-propagation model, so errors grow quadratically with range.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import PoseError
from .mapping import measurement_variance
from .terrain import sample_height

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class CameraModel:
    """Pinhole stereo camera: geometry, baseline rule and disparity noise."""

    fov_x_deg: float = 90.0
    image_width: int = 640
    image_height: int = 480
    disparity_noise_3sigma_px: float = 0.25
    overlap_fraction: float = 0.8
    ray_step: float = 0.04

    def __post_init__(self):
        if not 0.0 < self.fov_x_deg < 180.0:
            raise ValueError("fov_x_deg must be in (0, 180)")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.disparity_noise_3sigma_px < 0.0:
            raise ValueError("disparity noise must be >= 0")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.ray_step <= 0.0:
            raise ValueError("ray_step must be positive")

    @property
    def tan_half_fov(self):
        return math.tan(math.radians(self.fov_x_deg) / 2.0)

    @property
    def focal_px(self):
        """Focal length in pixels, square pixels assumed."""
        return self.image_width / (2.0 * self.tan_half_fov)

    @property
    def sigma_disparity(self):
        """1-sigma disparity noise (the configured figure is 3-sigma)."""
        return self.disparity_noise_3sigma_px / 3.0

    def baseline(self, agl):
        """Stereo baseline from the image-overlap rule at a given AGL.

        The non-overlapping fraction of the nadir ground footprint sets the
        baseline: b = (1 - overlap) * 2 * agl * tan(fov_x / 2).
        """
        return (1.0 - self.overlap_fraction) * 2.0 * agl * self.tan_half_fov


@dataclass(frozen=True)
class Pose:
    """Camera pose: timestamp, world position, camera-to-world quaternion (xyzw)."""

    t: float
    position: np.ndarray
    quat: np.ndarray

    @property
    def rotation(self):
        return quat_to_matrix(self.quat)


@dataclass
class RangeImage:
    """Grid of world-frame 3D points with per-point height variance.

    points is (h, w, 3) float64 with NaN rows for invalid pixels; variance
    is (h, w) float64, NaN where invalid.
    """

    points: np.ndarray
    variance: np.ndarray

    @property
    def width(self):
        return self.points.shape[1]

    @property
    def height(self):
        return self.points.shape[0]

    @property
    def valid_mask(self):
        return np.isfinite(self.points[:, :, 2])


def quat_to_matrix(q):
    """Rotation matrix from an (x, y, z, w) quaternion."""
    x, y, z, w = (float(v) for v in q)
    n = math.sqrt(x * x + y * y + z * z + w * w)
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def nadir_quat(pitch_deg=0.0):
    """Camera-to-world quaternion for a nadir view, optionally pitched.

    A positive pitch tilts the optical axis from straight down toward +y
    (the along-track direction of the standard flight plans).
    """
    half = math.radians(pitch_deg) / 2.0
    return np.array([math.cos(half), 0.0, 0.0, -math.sin(half)])


def pixel_directions(camera, rotation):
    """World-frame ray directions for every pixel, unit z in the camera frame.

    Row-major pixel order; with this scaling the ray parameter of
    P = cam + t * dir is the depth along the optical axis.
    """
    f = camera.focal_px
    nx, ny = camera.image_width, camera.image_height
    us = (np.arange(nx) - (nx - 1) / 2.0) / f
    vs = (np.arange(ny) - (ny - 1) / 2.0) / f
    xn, yn = np.meshgrid(us, vs)
    dirs_cam = np.stack([xn.ravel(), yn.ravel(), np.ones(nx * ny)], axis=1)
    return dirs_cam @ rotation.T


def render_range_image(terrain, pose, camera, rng=None, n_bisect=26):
    """Render one noisy RangeImage from a camera pose over the terrain.

    rng may be a numpy Generator, an int seed, or None for noise-free
    rendering regardless of the camera's configured disparity noise.
    Pixels whose ray leaves the terrain extent are invalid (NaN).
    """
    if rng is not None and not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))

    fieldsv = terrain.fields
    cam = np.asarray(pose.position, dtype=np.float64)
    cx, cy, cz = cam
    ex, ey = terrain.extent

    ground_x = min(max(cx, 0.0), ex)
    ground_y = min(max(cy, 0.0), ey)
    ground = sample_height(terrain, ground_x, ground_y)
    if 0.0 <= cx <= ex and 0.0 <= cy <= ey and cz <= ground:
        raise PoseError(
            "camera at z=%g is below the surface (%g) at (%g, %g)" % (cz, ground, cx, cy)
        )
    agl = cz - ground
    if agl <= 0.0:
        raise PoseError("camera is not above ground level (AGL %g)" % agl)

    dirs = pixel_directions(camera, pose.rotation)
    n = dirs.shape[0]
    norms = np.sqrt(dirs[:, 0] ** 2 + dirs[:, 1] ** 2 + dirs[:, 2] ** 2)
    dz = dirs[:, 2]
    down = dz < 0.0
    dt = np.where(down, camera.ray_step / norms, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_start = (cz - fieldsv.h_max) / np.where(down, -dz, np.nan)
        t_stop = (cz - (fieldsv.h_min - 0.5)) / np.where(down, -dz, np.nan)
    t0 = np.where(down, np.maximum(0.0, t_start - dt), 0.0)
    t_max = np.where(down, t_stop + 2.0 * dt, -1.0)

    t_hit = _kernels.raycast(fieldsv, cam, dirs, t0, dt, t_max, n_bisect)

    sigma_d = camera.sigma_disparity if rng is not None else 0.0
    b = camera.baseline(agl)
    f_px = camera.focal_px
    with np.errstate(invalid="ignore", divide="ignore"):
        if sigma_d > 0.0:
            disp = (b * f_px) / t_hit + sigma_d * rng.standard_normal(n)
            depth = np.where(disp > 0.0, (b * f_px) / disp, np.nan)
        else:
            depth = t_hit
        pts = cam[None, :] + depth[:, None] * dirs
        var = measurement_variance(depth, b, f_px, sigma_d, np.abs(dz))
    var = np.maximum(var, VARIANCE_FLOOR)
    bad = ~np.isfinite(depth)
    pts[bad] = np.nan
    var[bad] = np.nan

    ny, nx = camera.image_height, camera.image_width
    return RangeImage(points=pts.reshape(ny, nx, 3), variance=var.reshape(ny, nx))


@dataclass(frozen=True)
class FlightPlan:
    """Waypoint flight: straight segments at constant speed and frame rate."""

    waypoints: tuple
    speed: float
    frame_rate: float
    camera_pitch_deg: float = 0.0

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a flight plan needs at least 2 waypoints")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")
        if self.frame_rate <= 0.0:
            raise ValueError("frame_rate must be positive")

    def path_length(self):
        pts = np.asarray(self.waypoints, dtype=np.float64)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def n_frames(self):
        return int(math.floor(self.path_length() / self.speed * self.frame_rate + 1e-9)) + 1

    def position_at(self, t):
        pts = np.asarray(self.waypoints, dtype=np.float64)
        dist = self.speed * t
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        for i, sl in enumerate(seg_len):
            if dist <= sl or i == len(seg_len) - 1:
                if sl == 0.0:
                    return pts[i].copy()
                frac = min(dist / sl, 1.0)
                return pts[i] + frac * (pts[i + 1] - pts[i])
            dist -= sl
        return pts[-1].copy()


def fly(terrain, plan, camera, seed=0, noisy=True):
    """Yield the ordered (Pose, RangeImage) stream of a simulated flight.

    Poses are interpolated along the waypoints at speed / frame_rate; each
    frame's disparity noise comes from an independent child of the seed, so
    the whole stream is reproducible bit-for-bit.
    """
    quat = nadir_quat(plan.camera_pitch_deg)
    n = plan.n_frames()
    children = np.random.SeedSequence(seed).spawn(n)
    for k in range(n):
        t = k / plan.frame_rate
        pose = Pose(t=t, position=plan.position_at(t), quat=quat)
        rng = np.random.Generator(np.random.PCG64(children[k])) if noisy else None
        yield pose, render_range_image(terrain, pose, camera, rng)
