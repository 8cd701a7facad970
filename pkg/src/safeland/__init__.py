"""safeland: rolling multi-resolution elevation mapping and UAV safe
landing site detection, with a synthetic-terrain flight simulator and an
evaluation harness.

The numeric hot paths run on a compiled kernel backend when available and
fall back to pure numpy otherwise; see safeland._kernels.BACKEND.
"""

from ._kernels import BACKEND
from .detector import LandingConfig, LandingMap, detect
from .mapping import MapConfig, PyramidMap, kalman_update
from .sensor import CameraModel, FlightPlan, Pose, RangeImage, fly, render_range_image
from .terrain import TerrainModel, generate_terrain, sample_height

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CameraModel",
    "FlightPlan",
    "LandingConfig",
    "LandingMap",
    "MapConfig",
    "Pose",
    "PyramidMap",
    "RangeImage",
    "TerrainModel",
    "detect",
    "fly",
    "generate_terrain",
    "kalman_update",
    "render_range_image",
    "sample_height",
    "__version__",
]
