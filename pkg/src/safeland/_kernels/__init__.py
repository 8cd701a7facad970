"""Kernel backend selection.

The hot loops (terrain sampling, ray casting, pyramid fusion, detector
scans) exist twice: a Cython extension (``_core``) and a pure-numpy
fallback (``py_core``) with identical semantics. The compiled backend is
preferred when importable; set SAFELAND_KERNELS=python to force the
fallback or SAFELAND_KERNELS=compiled to fail hard when the extension is
missing.
"""

import os

from . import py_core

_requested = os.environ.get("SAFELAND_KERNELS", "auto").lower()
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(
        "SAFELAND_KERNELS must be 'auto', 'compiled' or 'python', got %r" % _requested
    )

_compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
        _compiled = None

if _compiled is not None:
    impl = _compiled
    BACKEND = "compiled"
else:
    impl = py_core
    BACKEND = "python"

terrain_heights = impl.terrain_heights
raycast = impl.raycast
fuse_points = impl.fuse_points
plane_fit_grid = impl.plane_fit_grid
disc_max_exceeds = impl.disc_max_exceeds


def available_backends():
    """Names of importable backends, compiled first when present."""
    names = []
    if _compiled is not None:
        names.append("compiled")
    names.append("python")
    return names


def get_impl(name):
    """Return a backend module by name ('compiled' or 'python')."""
    if name == "python":
        return py_core
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError("unknown backend %r" % name)
