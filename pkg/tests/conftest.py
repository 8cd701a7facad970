import math

import numpy as np
import pytest

from safeland import CameraModel, MapConfig, PyramidMap
from safeland.sensor import Pose, RangeImage, nadir_quat


def make_pose(x, y, z, t=0.0, pitch_deg=0.0):
    return Pose(t=t, position=np.array([x, y, z], dtype=float), quat=nadir_quat(pitch_deg))


def synthetic_range_image(xs, ys, zs, variance):
    """1 x N RangeImage from explicit world points (no rendering)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n = xs.size
    pts = np.empty((1, n, 3))
    pts[0, :, 0] = xs
    pts[0, :, 1] = ys
    pts[0, :, 2] = zs
    var = np.full((1, n), variance, dtype=float)
    return RangeImage(points=pts, variance=var)


def unit_fp_camera():
    """Camera whose footprint scale 2*tan(fov/2)/nx is exactly 1.

    With it, a measurement's footprint equals (z_a - z_i), which makes the
    fusion target level easy to steer in synthetic tests.
    """
    fov = 2.0 * math.degrees(math.atan(0.5))
    return CameraModel(fov_x_deg=fov, image_width=1, image_height=1)


def fuse_surface(pyramid, fn, level=None, variance=1e-8, t=0.0, pin_level=True):
    """Fuse one noiseless synthetic measurement per finest cell of fn(x, y).

    With pin_level, the measurement altitude is chosen so every point
    targets the requested pyramid level (default: the finest layer) and the
    surface relief must be small enough for that to hold.
    """
    cfg = pyramid.config
    level = cfg.depth if level is None else level
    n = cfg.extent_cells
    res = cfg.finest_resolution
    xs = pyramid.origin[0] + (np.arange(n) + 0.5) * res
    ys = pyramid.origin[1] + (np.arange(n) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    Z = np.asarray(fn(X, Y), dtype=float)
    # footprint == z_a - z must fall in (res(level+1), res(level)]
    target_fp = cfg.resolution(level) * 0.75
    z_a = float(Z.max()) + target_fp
    if pin_level:
        span = float(Z.max() - Z.min())
        assert span < target_fp * 0.33, "surface relief too large to pin one LoD"
    rimg = synthetic_range_image(X.ravel(), Y.ravel(), Z.ravel(), variance)
    pose = make_pose(float(pyramid.center[0]), float(pyramid.center[1]), z_a, t=t)
    return pyramid.fuse_range_image(rimg, pose, unit_fp_camera())


@pytest.fixture
def small_map():
    cfg = MapConfig(depth=3, finest_resolution=0.08, extent_cells=64)
    return PyramidMap(cfg, origin=(0.0, 0.0))


@pytest.fixture(params=["python", "compiled"])
def backend(request, monkeypatch):
    """Run a test under each kernel backend (compiled skipped when absent)."""
    import safeland._kernels as K

    try:
        impl = K.get_impl(request.param)
    except ImportError:
        pytest.skip("compiled kernels not built")
    for name in ("terrain_heights", "raycast", "fuse_points", "plane_fit_grid",
                 "disc_max_exceeds"):
        monkeypatch.setattr(K, name, getattr(impl, name))
    return request.param
