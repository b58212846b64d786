"""Readers and writers for pose, intrinsics and PFM depth files."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import Camera, DepthMap, Pose


def fmt(x) -> str:
    """Lossless f64 text form."""
    return format(float(x), ".17g")


def data_lines(path):
    """Yield ``(lineno, fields)`` for non-empty, non-comment lines."""
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield n, line.split()


def header_lines(meta):
    return [f"# {k}={v}" for k, v in meta.items()] if meta else []


# -- poses -----------------------------------------------------------------

def load_poses(path, world_from_camera=False):
    """Read ``frame_id tx ty tz qx qy qz qw`` lines into camera-from-world poses.

    With ``world_from_camera=True`` each line is taken as a camera-to-world
    transform (the TUM convention) and inverted on load.
    """
    poses = {}
    for n, f in data_lines(path):
        if len(f) != 8:
            raise FormatError(f"{path}:{n}: expected 8 fields, got {len(f)}")
        try:
            vals = [float(v) for v in f[1:]]
        except ValueError as e:
            raise FormatError(f"{path}:{n}: {e}") from None
        if f[0] in poses:
            raise FormatError(f"{path}:{n}: duplicate frame id {f[0]!r}")
        pose = Pose.from_quaternion(vals[3:], vals[:3])
        poses[f[0]] = pose.inverse() if world_from_camera else pose
    return poses


def pose_fields(pose: Pose):
    return [fmt(v) for v in pose.translation] + [fmt(v) for v in pose.quaternion()]


def save_poses(path, poses, world_from_camera=False, meta=None):
    lines = header_lines(meta)
    lines.append("# frame_id tx ty tz qx qy qz qw")
    for fid, pose in poses.items():
        if world_from_camera:
            pose = pose.inverse()
        lines.append(" ".join([str(fid)] + pose_fields(pose)))
    Path(path).write_text("\n".join(lines) + "\n")


# -- intrinsics ------------------------------------------------------------

def parse_camera(fields, where=""):
    try:
        fx, fy, cx, cy = (float(v) for v in fields[:4])
        w, h = int(fields[4]), int(fields[5])
    except (ValueError, IndexError) as e:
        raise FormatError(f"{where}: bad camera record: {e}") from None
    return Camera(fx, fy, cx, cy, w, h)


def camera_fields(cam: Camera):
    return [fmt(cam.fx), fmt(cam.fy), fmt(cam.cx), fmt(cam.cy), str(cam.width), str(cam.height)]


def load_intrinsics(path):
    """Read ``cam_id fx fy cx cy width height`` lines."""
    cams = {}
    for n, f in data_lines(path):
        if len(f) != 7:
            raise FormatError(f"{path}:{n}: expected 7 fields, got {len(f)}")
        cams[f[0]] = parse_camera(f[1:], f"{path}:{n}")
    return cams


def save_intrinsics(path, cams, meta=None):
    lines = header_lines(meta)
    lines.append("# cam_id fx fy cx cy width height")
    lines += [" ".join([str(k)] + camera_fields(c)) for k, c in cams.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# -- PFM depth -------------------------------------------------------------

def save_pfm(path, depth: DepthMap):
    """Grayscale little-endian PFM; invalid pixels are written as 0.0."""
    data = np.flipud(depth.as_array(invalid=0.0)).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pfm(path) -> DepthMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", raw)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    if m.group(1) != b"Pf":
        raise FormatError(f"{path}: colour PFM not supported for depth")
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} data bytes, got {len(body)}")
    arr = np.flipud(np.frombuffer(body, dtype=dtype).reshape(h, w)).astype(np.float64)
    return DepthMap(arr)
