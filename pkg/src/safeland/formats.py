"""On-disk formats: RIMG1 range images, pose logs, PGM exports, CSV helpers.

RIMG1 is little-endian binary: magic "RIMG1", u32 width, u32 height, then
width*height records of four float32 (world X, Y, Z in meters, height
variance in m^2), row-major; invalid pixels carry quiet NaN in all four
fields. Pose logs are plain text, one "timestamp tx ty tz qx qy qz qw"
line per frame. PGMs are binary (P5); 16-bit ones carry the height scale
in a comment line.
"""

import struct

import numpy as np

from .errors import FormatError
from .sensor import Pose, RangeImage

RIMG_MAGIC = b"RIMG1"


def save_range_image(path, rimg):
    """Write a RangeImage in RIMG1 format."""
    h, w = rimg.points.shape[:2]
    rec = np.empty((h, w, 4), dtype="<f4")
    rec[:, :, :3] = rimg.points
    rec[:, :, 3] = rimg.variance
    invalid = ~np.isfinite(rimg.points[:, :, 2])
    rec[invalid] = np.nan
    with open(path, "wb") as fh:
        fh.write(RIMG_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(rec.tobytes())


def load_range_image(path):
    """Read a RIMG1 file back into a RangeImage (float64 in memory)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != RIMG_MAGIC:
            raise FormatError("%s: bad magic %r (expected %r)" % (path, magic, RIMG_MAGIC))
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError("%s: truncated header" % path)
        w, h = struct.unpack("<II", header)
        data = fh.read(w * h * 16)
        if len(data) != w * h * 16:
            raise FormatError("%s: truncated pixel data" % path)
    rec = np.frombuffer(data, dtype="<f4").reshape(h, w, 4).astype(np.float64)
    return RangeImage(points=rec[:, :, :3].copy(), variance=rec[:, :, 3].copy())


def save_pose_log(path, poses):
    """Write poses as 'timestamp tx ty tz qx qy qz qw' lines."""
    with open(path, "w") as fh:
        for p in poses:
            fh.write(
                "%s %s %s %s %s %s %s %s\n"
                % (
                    repr(float(p.t)),
                    repr(float(p.position[0])),
                    repr(float(p.position[1])),
                    repr(float(p.position[2])),
                    repr(float(p.quat[0])),
                    repr(float(p.quat[1])),
                    repr(float(p.quat[2])),
                    repr(float(p.quat[3])),
                )
            )


def load_pose_log(path):
    """Read a pose log; returns a list of Pose."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError("%s:%d: expected 8 fields, got %d" % (path, lineno, len(parts)))
            vals = [float(v) for v in parts]
            poses.append(
                Pose(t=vals[0], position=np.array(vals[1:4]), quat=np.array(vals[4:8]))
            )
    return poses


def save_pgm16(path, grid, valid_mask=None, comment=None):
    """16-bit grayscale PGM, min-max normalized; invalid cells render as 0.

    The normalization scale is recorded in the header comment. Valid cells
    map to [1, 65535] so 0 is reserved for missing data.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if valid_mask is None:
        valid_mask = np.isfinite(grid)
    vals = grid[valid_mask]
    if vals.size:
        lo, hi = float(vals.min()), float(vals.max())
    else:
        lo, hi = 0.0, 0.0
    span = hi - lo
    out = np.zeros(grid.shape, dtype=np.uint16)
    if vals.size:
        if span > 0:
            scaled = 1.0 + (grid - lo) / span * 65534.0
        else:
            scaled = np.full(grid.shape, 32768.0)
        out[valid_mask] = np.round(scaled[valid_mask]).astype(np.uint16)
    lines = ["P5"]
    lines.append("# min=%s max=%s" % (repr(lo), repr(hi)))
    if comment:
        lines.append("# %s" % comment)
    lines.append("%d %d" % (grid.shape[1], grid.shape[0]))
    lines.append("65535")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(out.astype(">u2").tobytes())


def save_pgm8(path, grid, comment=None):
    """8-bit grayscale PGM from a uint8 grid (class maps, masks)."""
    grid = np.asarray(grid, dtype=np.uint8)
    lines = ["P5"]
    if comment:
        lines.append("# %s" % comment)
    lines.append("%d %d" % (grid.shape[1], grid.shape[0]))
    lines.append("255")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(grid.tobytes())


def load_pgm(path):
    """Read a binary PGM written by this module; returns (array, comments)."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    tokens = []
    comments = []
    while len(tokens) < 4:
        eol = data.find(b"\n", pos)
        if eol < 0:
            raise FormatError("%s: truncated PGM header" % path)
        line = data[pos : eol].decode("ascii", "replace").strip()
        pos = eol + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        tokens.extend(line.split())
    if tokens[0] != "P5":
        raise FormatError("%s: not a binary PGM" % path)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    count = w * h
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(h, w)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), comments


def export_map_pgms(pyramid, out_dir, prefix="layer"):
    """Per-layer 16-bit height PGMs plus NO_DATA mask PGMs."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for level in range(1, pyramid.depth + 1):
        value = pyramid._logical(pyramid._value, level)
        obs = pyramid._logical(pyramid._obs, level) > 0
        p1 = os.path.join(out_dir, "%s_%d.pgm" % (prefix, level))
        p2 = os.path.join(out_dir, "%s_%d_mask.pgm" % (prefix, level))
        save_pgm16(p1, value, valid_mask=obs, comment="layer %d heights (m)" % level)
        save_pgm8(p2, np.where(obs, 255, 0).astype(np.uint8), comment="observed mask")
        paths.extend([p1, p2])
    return paths


def export_landing_pgm(path, landing_map):
    """Landing classification as an 8-bit PGM using the class codes."""
    save_pgm8(
        path,
        landing_map.class_grid,
        comment="SAFE=255 BORDER=192 UNKNOWN=128 HAZARD=64 NO_DATA=0",
    )


def export_candidates_csv(path, landing_map):
    """Ranked candidates as (rank, world_x, world_y, clearance_m) CSV."""
    with open(path, "w") as fh:
        fh.write("rank,world_x,world_y,clearance_m\n")
        for rank, (r, c, wx, wy, clearance) in enumerate(landing_map.candidates, 1):
            fh.write("%d,%s,%s,%s\n" % (rank, repr(wx), repr(wy), repr(clearance)))
