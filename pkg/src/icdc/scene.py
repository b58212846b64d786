"""Synthetic scenes and an exact ray-casting depth renderer.

The renderer is the test oracle standing in for learned depth sources:
depth is the z-coordinate of the first ray/primitive intersection, so
ground-truth correspondences can be computed in closed form.

World frame of the presets: x right, y down, z forward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import BehindCamera, FormatError, InvalidDepth, OutOfBoundsInJ
from .geometry import Camera, DepthMap, Pose
from .io import data_lines, fmt

OCCLUSION_TOL = 1e-6

# analytic_flow status codes
FLOW_OK = 0
FLOW_MISS = 1
FLOW_BEHIND = 2
FLOW_OUT_OF_BOUNDS = 3
FLOW_OCCLUDED = 4


def plane_axes(normal):
    """Deterministic in-plane ``(u, v)`` axes for a unit normal.

    ``u = normalize(n x ref)`` with ``ref = +y`` unless the normal is within
    ~25 degrees of the y axis, in which case ``ref = +z``; ``v = n x u``.
    """
    n = np.asarray(normal, dtype=np.float64)
    ref = np.array([0.0, 1.0, 0.0]) if abs(n[1]) <= 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(n, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


@dataclass(frozen=True, eq=False)
class Plane:
    """Finite two-sided rectangle; ``extent_u``/``extent_v`` are full side lengths."""

    center: np.ndarray
    normal: np.ndarray
    extent_u: float
    extent_v: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        if not (self.extent_u > 0 and self.extent_v > 0):
            raise ValueError("plane extents must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "normal", n / norm)

    @property
    def axes(self):
        return plane_axes(self.normal)

    @property
    def area(self):
        return self.extent_u * self.extent_v

    def row(self):
        u, v = self.axes
        return np.concatenate([self.center, self.normal, u, v, [self.extent_u / 2, self.extent_v / 2]])

    def sample(self, n, rng):
        u, v = self.axes
        a = rng.uniform(-0.5, 0.5, n) * self.extent_u
        b = rng.uniform(-0.5, 0.5, n) * self.extent_v
        return self.center + a[:, None] * u + b[:, None] * v


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if not np.all(hi > lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def row(self):
        return np.concatenate([self.lo, self.hi])

    @property
    def area(self):
        d = self.hi - self.lo
        return 2 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])

    def faces(self):
        c = (self.lo + self.hi) / 2
        d = self.hi - self.lo
        out = []
        for ax in range(3):
            nrm = np.zeros(3)
            nrm[ax] = 1.0
            u, v = plane_axes(nrm)
            eu = float(np.abs(u) @ d)
            ev = float(np.abs(v) @ d)
            for side in (self.lo[ax], self.hi[ax]):
                fc = c.copy()
                fc[ax] = side
                out.append(Plane(fc, nrm, eu, ev))
        return out

    def sample(self, n, rng):
        faces = self.faces()
        w = np.array([f.area for f in faces])
        which = rng.choice(len(faces), size=n, p=w / w.sum())
        pts = np.empty((n, 3))
        for k, f in enumerate(faces):
            sel = which == k
            pts[sel] = f.sample(int(sel.sum()), rng)
        return pts


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    primitives: tuple
    scene_id: str = "scene"

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValueError("scene must contain at least one primitive")
        object.__setattr__(self, "primitives", prims)
        planes = [p.row() for p in prims if isinstance(p, Plane)]
        boxes = [p.row() for p in prims if isinstance(p, Box)]
        object.__setattr__(self, "_planes", np.array(planes, dtype=np.float64).reshape(-1, 14))
        object.__setattr__(self, "_boxes", np.array(boxes, dtype=np.float64).reshape(-1, 6))

    def with_primitives(self, *extra, scene_id=None):
        return SyntheticScene(self.primitives + tuple(extra), scene_id or self.scene_id)

    def cast(self, origins, dirs):
        """Nearest hit parameter per ray, ``inf`` on a miss."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        if origins.shape[0] == 1 and dirs.shape[0] > 1:
            origins = np.ascontiguousarray(np.broadcast_to(origins, dirs.shape))
        return kernels.cast_rays(origins, dirs, self._planes, self._boxes)

    def sample_surface(self, density, rng):
        """Uniform random surface points, ``density`` per square metre."""
        chunks = [p.sample(max(1, int(round(p.area * density))), rng) for p in self.primitives]
        return np.concatenate(chunks, axis=0)


@dataclass(frozen=True)
class DomainPerturbation:
    depth_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude_min: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be >= 0")
        if self.outlier_magnitude_min < 0:
            raise ValueError("outlier_magnitude_min must be >= 0")


def render_depth(scene: SyntheticScene, cam: Camera, pose: Pose) -> DepthMap:
    rays = cam.rays(cam.pixel_grid())
    t = scene.cast(pose.center[None, :], rays @ pose.rotation)
    # ray directions carry unit camera-z, so the hit parameter is the z-depth
    return DepthMap(t.reshape(cam.shape))


def perturb(d: DepthMap, pert: DomainPerturbation) -> DepthMap:
    """Gaussian noise on every valid pixel plus seeded gross outliers.

    Outliers move a pixel by a magnitude drawn from
    ``[m, 2m]`` (``m = outlier_magnitude_min``) with random sign; the sign
    is forced positive where a negative shift would leave depth <= 0.
    """
    if pert.depth_noise_sigma == 0 and pert.outlier_fraction == 0:
        return d
    rng = np.random.default_rng(pert.seed)
    vals = d.values.copy()
    idx = np.flatnonzero(d.valid.ravel())
    flat = vals.reshape(-1)
    if pert.depth_noise_sigma > 0:
        flat[idx] += rng.normal(0.0, pert.depth_noise_sigma, idx.size)
    n_out = int(round(pert.outlier_fraction * idx.size))
    if n_out:
        chosen = rng.choice(idx, size=n_out, replace=False)
        mag = pert.outlier_magnitude_min * (1.0 + rng.uniform(0.0, 1.0, n_out))
        sign = np.where(rng.uniform(size=n_out) < 0.5, -1.0, 1.0)
        sign = np.where(flat[chosen] - mag <= 0, 1.0, sign)
        flat[chosen] += sign * mag
    flat[idx] = np.maximum(flat[idx], 1e-6)
    return DepthMap(vals, d.valid)


def analytic_flow(scene, cam_i, pose_i, cam_j, pose_j, pixels):
    """Exact correspondences for many pixels of frame I.

    Returns ``(q, status)``; ``q`` is NaN where status is not ``FLOW_OK``.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    dirs = cam_i.rays(pixels) @ pose_i.rotation
    t = scene.cast(pose_i.center[None, :], dirs)
    status = np.full(len(pixels), FLOW_OK, dtype=np.int8)
    q = np.full((len(pixels), 2), np.nan)
    hit = np.isfinite(t)
    status[~hit] = FLOW_MISS
    X = pose_i.center + t[hit, None] * dirs[hit]
    Xj = pose_j.apply(X)
    idx = np.flatnonzero(hit)
    front = Xj[:, 2] > 0
    status[idx[~front]] = FLOW_BEHIND
    idx, X, Xj = idx[front], X[front], Xj[front]
    qq = cam_j.project_points(Xj)
    inb = cam_j.in_bounds(qq)
    status[idx[~inb]] = FLOW_OUT_OF_BOUNDS
    idx, X, qq = idx[inb], X[inb], qq[inb]
    seg = X - pose_j.center
    t_hit = scene.cast(pose_j.center[None, :], seg)
    blocked = (1.0 - t_hit) * np.linalg.norm(seg, axis=1) > OCCLUSION_TOL
    status[idx[blocked]] = FLOW_OCCLUDED
    keep = ~blocked
    q[idx[keep]] = qq[keep]
    return q, status


def analytic_correspondence(scene, cam_i, pose_i, cam_j, pose_j, p):
    """Exact match of pixel ``p`` of I in J, or ``None`` when occluded in J."""
    q, status = analytic_flow(scene, cam_i, pose_i, cam_j, pose_j, np.asarray(p, dtype=np.float64)[None])
    s = status[0]
    if s == FLOW_MISS:
        raise InvalidDepth(f"pixel {p} sees no surface")
    if s == FLOW_BEHIND:
        raise BehindCamera(f"surface at pixel {p} is behind camera J")
    if s == FLOW_OUT_OF_BOUNDS:
        raise OutOfBoundsInJ(f"pixel {p} leaves image J")
    if s == FLOW_OCCLUDED:
        return None
    return q[0]


# -- presets ---------------------------------------------------------------


def look_along(center, forward, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera at ``center`` looking along ``forward`` with image-down ``down``."""
    z = np.asarray(forward, dtype=np.float64)
    z = z / np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_center(np.stack([x, y, z]), center)


def corridor_scene(length=100.0, half_width=4.0, wall_height=8.0, camera_height=1.5,
                   margin_back=20.0, margin_front=80.0, scene_id="corridor"):
    """Two walls and a ground plane along a straight street on +z."""
    z0, z1 = -margin_back, length + margin_front
    zc, zl = (z0 + z1) / 2, z1 - z0
    ground_y = camera_height
    wall_yc = ground_y - wall_height / 2
    # plane_axes: wall normal +-x gives u along z, v along y; ground normal y gives u along x, v along z
    prims = (
        Plane([-half_width, wall_yc, zc], [1.0, 0.0, 0.0], zl, wall_height),
        Plane([half_width, wall_yc, zc], [-1.0, 0.0, 0.0], zl, wall_height),
        Plane([0.0, ground_y, zc], [0.0, -1.0, 0.0], 2 * half_width, zl),
    )
    return SyntheticScene(prims, scene_id)


def corridor_camera(width=320, height=240, focal=200.0):
    return Camera(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def straight_trajectory(n_frames, step=1.0, start=(0.0, 0.0, 0.0), yaw_deg=0.0):
    """Forward-facing frames along +z spaced ``step`` metres apart."""
    fwd = np.array([math.sin(math.radians(yaw_deg)), 0.0, math.cos(math.radians(yaw_deg))])
    start = np.asarray(start, dtype=np.float64)
    return [look_along(start + np.array([0.0, 0.0, k * step]), fwd) for k in range(n_frames)]


def out_and_back_trajectory(length, step=1.0, lateral=0.0):
    """Drive ``length`` metres up the street on +z and return the same way."""
    n = int(round(length / step))
    out = [look_along([lateral, 0.0, k * step], [0, 0, 1]) for k in range(n + 1)]
    back = [look_along([lateral, 0.0, (n - k) * step], [0, 0, -1]) for k in range(1, n + 1)]
    return out + back


def circle_trajectory(radius, step=1.0, loops=1, center=(0.0, 0.0, 0.0)):
    """Counter-clockwise loop(s) in the ground plane, tangent-facing."""
    circ = 2 * math.pi * radius
    per_loop = int(round(circ / step))
    c = np.asarray(center, dtype=np.float64)
    poses = []
    for k in range(per_loop * loops):
        a = 2 * math.pi * (k % per_loop) / per_loop
        pos = c + radius * np.array([math.cos(a), 0.0, math.sin(a)])
        tangent = np.array([-math.sin(a), 0.0, math.cos(a)])
        poses.append(look_along(pos, tangent))
    return poses


# -- scene files -----------------------------------------------------------


def load_scene(path) -> SyntheticScene:
    """Read ``plane cx cy cz nx ny nz eu ev`` / ``box x0 y0 z0 x1 y1 z1`` lines.

    An optional ``id <name>`` line names the scene.
    """
    prims = []
    scene_id = Path(path).stem
    for n, f in data_lines(path):
        kind = f[0].lower()
        try:
            if kind == "id" and len(f) == 2:
                scene_id = f[1]
            elif kind == "plane" and len(f) == 9:
                v = [float(x) for x in f[1:]]
                prims.append(Plane(v[0:3], v[3:6], v[6], v[7]))
            elif kind == "box" and len(f) == 7:
                v = [float(x) for x in f[1:]]
                prims.append(Box(v[0:3], v[3:6]))
            else:
                raise FormatError(f"{path}:{n}: unrecognised record {' '.join(f)!r}")
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{path}:{n}: {e}") from None
    if not prims:
        raise FormatError(f"{path}: scene has no primitives")
    return SyntheticScene(tuple(prims), scene_id)


def save_scene(path, scene: SyntheticScene, meta=None):
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()] + [f"id {scene.scene_id}"]
    for p in scene.primitives:
        if isinstance(p, Plane):
            vals = list(p.center) + list(p.normal) + [p.extent_u, p.extent_v]
            lines.append("plane " + " ".join(fmt(v) for v in vals))
        else:
            lines.append("box " + " ".join(fmt(v) for v in list(p.lo) + list(p.hi)))
    Path(path).write_text("\n".join(lines) + "\n")


def frame_ids(label, n):
    return [f"{label}_{k:04d}" for k in range(n)]


def build_map(scene, cam, trajectories, density=1.0, max_range=30.0, seed=0):
    """Sparse map of a scene observed along several trajectories.

    Surface points are sampled once (``density`` per square metre) and shared
    by all trajectories. A frame keeps a keypoint for each point in front of
    it, inside the image, no farther than ``max_range`` metres in depth and
    not hidden by a nearer surface. ``trajectories`` maps a label to a list of
    poses; frames are named ``<label>_<index>``.
    """
    from .mapping import MultiTrajectoryMap

    rng = np.random.default_rng(seed)
    pts = scene.sample_surface(density, rng)
    mtm = MultiTrajectoryMap()
    seen = np.zeros(len(pts), dtype=bool)
    for label, poses in trajectories.items():
        for fid, pose in zip(frame_ids(label, len(poses)), poses):
            mtm.add_frame(fid, pose, cam, label, cam_id="0")
            Xc = pose.apply(pts)
            z = Xc[:, 2]
            cand = np.flatnonzero((z > 0) & (z <= max_range))
            xy = cam.project_points(Xc[cand])
            inb = cam.in_bounds(xy, tol=0.0)
            cand, xy = cand[inb], xy[inb]
            seg = pts[cand] - pose.center
            t = scene.cast(pose.center[None, :], seg)
            vis = (1.0 - t) * np.linalg.norm(seg, axis=1) <= OCCLUSION_TOL
            cand, xy = cand[vis], xy[vis]
            seen[cand] = True
            mtm.set_keypoints(fid, xy, z[cand], cand)
    for i in np.flatnonzero(seen):
        mtm.add_point(int(i), pts[i])
    return mtm


PRESETS = {"corridor": corridor_scene}
