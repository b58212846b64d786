"""Multi-trajectory sparse maps, DLT triangulation and scene blocks.

A map holds frames of several trajectories (one visual domain each) in a
single metric world frame, per-frame keypoints with optional depth and
3-D point links, and the 3-D points themselves.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometry, DegeneratePointcloud, FormatError, UnknownFrame
from .geometry import Camera, Pose
from .io import camera_fields, data_lines, fmt, header_lines, parse_camera, pose_fields

MAX_BLOCK_EXTENT = 64.0
BUFFER_FRACTION = 0.20
MAX_POINT_DISTANCE = 64.0
UNIT_BOX_SPAN = 3.0
BOX_SCALES = (1, 2, 4, 8, 16, 32, 64)
BODY_DIAGONAL = np.ones(3) / np.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class Frame:
    frame_id: str
    pose: Pose
    camera: Camera
    label: str
    cam_id: str = "0"

    def __post_init__(self):
        if not self.label:
            raise ValueError(f"frame {self.frame_id!r} has an empty trajectory label")


@dataclass(eq=False)
class Keypoints:
    """Per-frame keypoints. ``depth`` is NaN and ``point_ids`` is -1 when absent."""

    xy: np.ndarray
    depth: np.ndarray
    point_ids: np.ndarray

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        if not len(self.xy) == len(self.depth) == len(self.point_ids):
            raise ValueError("keypoint arrays differ in length")

    def __len__(self):
        return len(self.xy)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64))


class MultiTrajectoryMap:
    def __init__(self):
        self.cameras: dict[str, Camera] = {}
        self.frames: dict[str, Frame] = {}
        self.keypoints: dict[str, Keypoints] = {}
        self.points3d: dict[int, np.ndarray] = {}

    def add_frame(self, frame_id, pose, camera, label, cam_id=None):
        frame_id = str(frame_id)
        if cam_id is None:
            cam_id = next((k for k, c in self.cameras.items() if c == camera), str(len(self.cameras)))
        self.cameras.setdefault(cam_id, camera)
        self.frames[frame_id] = Frame(frame_id, pose, self.cameras[cam_id], label, cam_id)
        self.keypoints.setdefault(frame_id, Keypoints.empty())
        return self.frames[frame_id]

    def set_keypoints(self, frame_id, xy, depth=None, point_ids=None):
        self._frame(frame_id)
        n = len(np.asarray(xy).reshape(-1, 2))
        depth = np.full(n, np.nan) if depth is None else depth
        point_ids = np.full(n, -1) if point_ids is None else point_ids
        self.keypoints[frame_id] = Keypoints(xy, depth, point_ids)

    def add_point(self, point_id, X):
        self.points3d[int(point_id)] = np.asarray(X, dtype=np.float64).reshape(3)

    def _frame(self, frame_id):
        try:
            return self.frames[frame_id]
        except KeyError:
            raise UnknownFrame(f"unknown frame {frame_id!r}") from None

    def labels(self):
        return list(dict.fromkeys(f.label for f in self.frames.values()))

    def trajectory(self, label):
        """Frame ids of one trajectory in map order."""
        return [fid for fid, f in self.frames.items() if f.label == label]

    def positions(self, frame_ids):
        return np.array([self.frames[f].pose.center for f in frame_ids]).reshape(-1, 3)

    def keypoint_depths(self, frame_id):
        """Keypoint pixels and depths; stored depth wins, else the linked point's z."""
        frame = self._frame(frame_id)
        kp = self.keypoints[frame_id]
        depth = kp.depth.copy()
        need = ~np.isfinite(depth) & (kp.point_ids >= 0)
        if need.any():
            X = np.array([self.points3d[int(i)] for i in kp.point_ids[need]])
            depth[need] = frame.pose.apply(X)[:, 2]
        return kp.xy, depth

    def validate(self, depth_tol=1e-6):
        for fid, kp in self.keypoints.items():
            frame = self._frame(fid)
            for pid, d in zip(kp.point_ids, kp.depth):
                if pid < 0:
                    continue
                if int(pid) not in self.points3d:
                    raise FormatError(f"frame {fid}: keypoint links missing point {pid}")
                if np.isfinite(d):
                    z = frame.pose.apply(self.points3d[int(pid)])[2]
                    if abs(z - d) > depth_tol:
                        raise FormatError(f"frame {fid}: keypoint depth {d} disagrees with point z {z}")


# -- map file --------------------------------------------------------------

SECTIONS = ("cameras", "frames", "keypoints", "points3d")


def save_map(path, mtm: MultiTrajectoryMap, meta=None):
    """Sectioned text map; floats use 17 significant digits."""
    out = header_lines(meta)
    out.append("[cameras]")
    out += [" ".join([cid] + camera_fields(c)) for cid, c in mtm.cameras.items()]
    out.append("[frames]")
    for fid, f in mtm.frames.items():
        out.append(" ".join([fid, f.label] + pose_fields(f.pose) + [f.cam_id]))
    out.append("[keypoints]")
    for fid, kp in mtm.keypoints.items():
        for (x, y), d, pid in zip(kp.xy, kp.depth, kp.point_ids):
            ds = fmt(d) if np.isfinite(d) else "-1"
            out.append(f"{fid} {fmt(x)} {fmt(y)} {ds} {int(pid)}")
    out.append("[points3d]")
    for pid, X in mtm.points3d.items():
        out.append(f"{pid} {fmt(X[0])} {fmt(X[1])} {fmt(X[2])}")
    Path(path).write_text("\n".join(out) + "\n")


def load_map(path, cameras=None) -> MultiTrajectoryMap:
    """Read a map file. ``cameras`` supplies intrinsics when the file has no
    ``[cameras]`` section."""
    mtm = MultiTrajectoryMap()
    if cameras:
        mtm.cameras.update(cameras)
    section = None
    kps: dict[str, list] = {}
    for n, f in data_lines(path):
        if len(f) == 1 and f[0].startswith("[") and f[0].endswith("]"):
            section = f[0][1:-1]
            if section not in SECTIONS:
                raise FormatError(f"{path}:{n}: unknown section {section!r}")
            continue
        try:
            if section == "cameras" and len(f) == 7:
                mtm.cameras[f[0]] = parse_camera(f[1:], f"{path}:{n}")
            elif section == "frames" and len(f) == 10:
                if f[9] not in mtm.cameras:
                    raise FormatError(f"{path}:{n}: unknown camera id {f[9]!r}")
                vals = [float(v) for v in f[2:9]]
                pose = Pose.from_quaternion(vals[3:], vals[:3])
                mtm.add_frame(f[0], pose, mtm.cameras[f[9]], f[1], cam_id=f[9])
            elif section == "keypoints" and len(f) == 5:
                d = float(f[3])
                kps.setdefault(f[0], []).append((float(f[1]), float(f[2]), d if d >= 0 else np.nan, int(f[4])))
            elif section == "points3d" and len(f) == 4:
                mtm.add_point(int(f[0]), [float(v) for v in f[1:]])
            else:
                raise FormatError(f"{path}:{n}: malformed line in section {section!r}")
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{path}:{n}: {e}") from None
    for fid, rows in kps.items():
        if fid not in mtm.frames:
            raise FormatError(f"{path}: keypoints for unknown frame {fid!r}")
        a = np.array(rows, dtype=np.float64)
        mtm.keypoints[fid] = Keypoints(a[:, :2], a[:, 2], a[:, 3].astype(np.int64))
    mtm.validate()
    return mtm


# -- triangulation and sparse depth ----------------------------------------


class Triangulation(NamedTuple):
    point: np.ndarray
    residual_px: float


def triangulate(observations) -> Triangulation:
    """Linear DLT triangulation from ``(camera, pose, pixel)`` observations.

    The system is built in normalised image coordinates and solved by the
    right singular vector of the smallest singular value. Raises
    :class:`DegenerateGeometry` when the two smallest singular values agree to
    1e-9 relative (no unique solution, e.g. zero baseline), when the point
    is at infinity, or when it lies behind any observing camera.
    """
    obs = list(observations)
    if len(obs) < 2:
        raise DegenerateGeometry("need at least two observations")
    rows = []
    for cam, pose, px in obs:
        a, b, _ = cam.rays(np.asarray(px, dtype=np.float64))
        P = np.hstack([pose.rotation, pose.translation[:, None]])
        rows.append(a * P[2] - P[0])
        rows.append(b * P[2] - P[1])
    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    if s[-2] - s[-1] <= 1e-9 * s[0]:
        raise DegenerateGeometry("rays do not intersect in a unique point")
    Xh = vt[-1]
    if abs(Xh[3]) <= 1e-12 * np.linalg.norm(Xh):
        raise DegenerateGeometry("point at infinity")
    X = Xh[:3] / Xh[3]
    sq = []
    for cam, pose, px in obs:
        Xc = pose.apply(X)
        if Xc[2] <= 0:
            raise DegenerateGeometry("triangulated point is behind an observing camera")
        sq.append(np.sum((cam.project_points(Xc) - np.asarray(px)) ** 2))
    return Triangulation(X, float(np.sqrt(np.mean(sq))))


def extract_sparse_depth(mtm: MultiTrajectoryMap, frame_id):
    """``[(pixel, depth), ...]`` for keypoints linked to a 3-D point in front
    of the camera; depth is the point's z in this frame."""
    frame = mtm._frame(frame_id)
    kp = mtm.keypoints[frame_id]
    out = []
    for xy, pid in zip(kp.xy, kp.point_ids):
        if pid < 0:
            continue
        z = frame.pose.apply(mtm.points3d[int(pid)])[2]
        if z > 0:
            out.append(((float(xy[0]), float(xy[1])), float(z)))
    return out


# -- blocks ----------------------------------------------------------------


@dataclass(frozen=True)
class BoxHierarchy:
    scales: tuple = BOX_SCALES
    unit_span_m: float = UNIT_BOX_SPAN

    def span(self, scale):
        return self.unit_span_m * scale


@dataclass(eq=False)
class Alignment:
    """World -> box coordinates: ``x_box = scale * rotation @ x + translation``.

    In box coordinates the scale-``s`` box is the cube ``[-s/2, s/2]^3``.
    """

    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    principal_axis: np.ndarray
    containment: dict
    containment_all: dict
    n_points: int
    n_core_points: int

    def apply(self, X):
        return self.scale * (np.asarray(X) @ self.rotation.T) + self.translation


@dataclass(eq=False)
class SceneBlock:
    index: int
    label: str
    members: tuple
    buffer: tuple
    core_lo: np.ndarray
    core_hi: np.ndarray
    buffer_lo: np.ndarray
    buffer_hi: np.ndarray
    extent: float
    alignment: Alignment | None = None

    def contains(self, X, tol=1e-9):
        X = np.asarray(X)
        return np.all((X >= self.buffer_lo - tol) & (X <= self.buffer_hi + tol), axis=-1)


def max_pairwise_distance(P):
    P = np.asarray(P).reshape(-1, 3)
    if len(P) < 2:
        return 0.0
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    return float(d.max())


def _greedy_blocks(P, max_extent):
    blocks, cur, diam = [], [0], 0.0
    for i in range(1, len(P)):
        reach = float(np.linalg.norm(P[cur] - P[i], axis=1).max())
        if max(diam, reach) <= max_extent + 1e-9:
            cur.append(i)
            diam = max(diam, reach)
        else:
            blocks.append(cur)
            cur, diam = [i], 0.0
    blocks.append(cur)
    return blocks


def _rebalance_tail(blocks, P, max_extent):
    if len(blocks) < 2 or max_pairwise_distance(P[blocks[-1]]) >= 0.25 * max_extent:
        return blocks
    merged = blocks[-2] + blocks[-1]
    best_k, best_gap = len(blocks[-2]), None
    for k in range(1, len(merged)):
        ea = max_pairwise_distance(P[merged[:k]])
        eb = max_pairwise_distance(P[merged[k:]])
        if ea > max_extent + 1e-9 or eb > max_extent + 1e-9:
            continue
        gap = abs(ea - eb)
        if best_gap is None or gap < best_gap - 1e-12:
            best_k, best_gap = k, gap
    return blocks[:-2] + [merged[:best_k], merged[best_k:]]


def partition_blocks(mtm: MultiTrajectoryMap, label, max_extent=MAX_BLOCK_EXTENT,
                     buffer_fraction=BUFFER_FRACTION, rebalance=True):
    """Split one trajectory into blocks of bounded spatial extent.

    Frames are walked in map order and a new block opens whenever adding
    the next frame would push the block's largest pairwise camera distance
    above ``max_extent``. If the last block ends up shorter than a quarter
    of ``max_extent`` the last two blocks are re-split as evenly as the
    bound allows. Each block's axis-aligned bounds are then grown by
    ``buffer_fraction`` of their size per dimension (half on each side);
    frames of other blocks inside those bounds form the block's buffer.
    """
    ids = mtm.trajectory(label)
    if not ids:
        return []
    P = mtm.positions(ids)
    groups = _greedy_blocks(P, max_extent)
    if rebalance:
        groups = _rebalance_tail(groups, P, max_extent)
    blocks = []
    for b, g in enumerate(groups):
        lo, hi = P[g].min(axis=0), P[g].max(axis=0)
        pad = (hi - lo) * buffer_fraction / 2.0
        blo, bhi = lo - pad, hi + pad
        inside = np.all((P >= blo - 1e-9) & (P <= bhi + 1e-9), axis=1)
        core = set(g)
        buf = tuple(ids[i] for i in np.flatnonzero(inside) if i not in core)
        blocks.append(SceneBlock(b, label, tuple(ids[i] for i in g), buf, lo, hi, blo, bhi,
                                 max_pairwise_distance(P[g])))
    return blocks


def rotation_between(a, b):
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=np.float64) / np.linalg.norm(a)
    b = np.asarray(b, dtype=np.float64) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1.0 + 1e-12:
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def principal_axis(X):
    """First principal component of a point cloud, sign-fixed so that its
    largest-magnitude entry is positive."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 3:
        raise DegeneratePointcloud("need at least three points")
    w, V = np.linalg.eigh(np.cov(X.T))
    if not w[-2] > 1e-12 * max(w[-1], 1e-300):
        raise DegeneratePointcloud("point cloud covariance has rank < 2")
    e = V[:, -1]
    if e[np.argmax(np.abs(e))] < 0:
        e = -e
    return e


def block_points(block: SceneBlock, mtm: MultiTrajectoryMap, max_distance=MAX_POINT_DISTANCE):
    """Point ids seen by core and by buffer frames within ``max_distance`` of
    the observing camera. Returns ``(core_ids, all_ids)`` as sorted arrays."""
    def gather(frames):
        keep = set()
        for fid in frames:
            pids = mtm.keypoints[fid].point_ids
            pids = pids[pids >= 0]
            if not len(pids):
                continue
            X = np.array([mtm.points3d[int(p)] for p in pids])
            near = np.linalg.norm(X - mtm.frames[fid].pose.center, axis=1) <= max_distance
            keep.update(int(p) for p in pids[near])
        return keep

    core = gather(block.members)
    return np.array(sorted(core), dtype=np.int64), np.array(sorted(core | gather(block.buffer)), dtype=np.int64)


def _containment(Y, scales):
    m = np.abs(Y).max(axis=1) if len(Y) else np.zeros(0)
    return {s: float(np.mean(m <= s / 2.0)) if len(Y) else 0.0 for s in scales}


def align_block(block: SceneBlock, mtm: MultiTrajectoryMap, boxes: BoxHierarchy = BoxHierarchy(),
                max_distance=MAX_POINT_DISTANCE) -> SceneBlock:
    """Fit the box hierarchy to the block's point cloud.

    Points of core and buffer frames farther than ``max_distance`` from the
    observing camera are dropped. The cloud is scaled so one box unit spans
    ``boxes.unit_span_m`` metres, rotated so its first principal component
    lies on the (1, 1, 1) body diagonal, and shifted so its coordinate-wise
    median (taken in box axes) is the box centre. Containment per box scale
    is reported for the core frames' points.
    """
    core_ids, all_ids = block_points(block, mtm, max_distance)
    X = np.array([mtm.points3d[int(p)] for p in all_ids]).reshape(-1, 3)
    e = principal_axis(X)
    R = rotation_between(e, BODY_DIAGONAL)
    s = 1.0 / boxes.unit_span_m
    Y = s * (X @ R.T)
    t = -np.median(Y, axis=0)
    Y += t
    core_mask = np.isin(all_ids, core_ids)
    al = Alignment(R, s, t, e, _containment(Y[core_mask], boxes.scales),
                   _containment(Y, boxes.scales), len(all_ids), int(core_mask.sum()))
    return SceneBlock(block.index, block.label, block.members, block.buffer, block.core_lo,
                      block.core_hi, block.buffer_lo, block.buffer_hi, block.extent, al)
