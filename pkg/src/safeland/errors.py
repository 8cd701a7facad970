"""Exception types shared across the package."""


class SafelandError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SafelandError):
    """A spatial query fell outside the valid domain (terrain extent, map bounds)."""


class PlacementError(SafelandError):
    """Rock placement could not reach the requested coverage."""


class PoseError(SafelandError):
    """A camera pose is invalid (e.g. below the terrain surface)."""


class FootprintError(SafelandError):
    """A pixel footprint could not be computed (camera not above the measurement)."""


class VarianceError(SafelandError):
    """A variance argument was non-positive or a baseline was zero."""


class ConfigError(SafelandError):
    """Invalid or unknown configuration input."""


class FormatError(SafelandError):
    """A file did not match its expected on-disk format."""
