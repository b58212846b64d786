"""Rigid poses, pinhole cameras, depth maps, homographies and angular errors.

Poses are camera-from-world everywhere: a world point ``X`` lands at
``R @ X + t`` in camera coordinates. Pixel centres sit on integer
coordinates, so the valid image area is ``[0, width-1] x [0, height-1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, GeometryError, OutOfBounds, PointAtInfinity

ORTHO_TOL = 1e-9
# slack for sub-pixel coordinates that fall outside the image by rounding only
BOUNDS_TOL = 1e-6
MIN_BASELINE = 1e-6


def _frozen(a, shape=None):
    a = np.array(a, dtype=np.float64, copy=True)
    if shape is not None and a.shape != shape:
        raise GeometryError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


def quat_to_matrix(q):
    """Rotation matrix from a unit quaternion given as ``(x, y, z, w)``."""
    x, y, z, w = (float(v) for v in q)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def normalize_quat(q):
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if not np.isfinite(n) or n < 1e-12:
        raise GeometryError(f"degenerate quaternion {q!r}")
    # an already-unit quaternion is kept bit-exact so text round trips are lossless
    if abs(n - 1.0) <= 4 * np.finfo(float).eps:
        return q.copy()
    return q / n


def matrix_to_quat(R):
    q = Rotation.from_matrix(np.asarray(R)).as_quat()
    # canonical hemisphere, w >= 0
    return -q if q[3] < 0 else q


def rotation_angle_deg(R):
    """Angle of a rotation matrix in degrees.

    Uses atan2 of the skew and trace parts, which stays accurate near 0
    where an arccos of the trace loses about half the digits.
    """
    R = np.asarray(R, dtype=np.float64)
    s = math.hypot(R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1])
    return math.degrees(math.atan2(s, float(np.trace(R)) - 1.0))


def axis_angle_matrix(axis, angle_deg):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * math.radians(angle_deg)).as_matrix()


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-from-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray
    quat: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("pose contains non-finite values")
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self.quat is not None:
            object.__setattr__(self, "quat", _frozen(self.quat, (4,)))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), quat=np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_quaternion(cls, q_xyzw, t):
        q = normalize_quat(q_xyzw)
        return cls(quat_to_matrix(q), t, quat=q)

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_center(cls, R, center):
        """Pose with camera-from-world rotation ``R`` placed at world ``center``."""
        R = np.asarray(R, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def quaternion(self):
        if self.quat is not None:
            return self.quat.copy()
        return matrix_to_quat(self.rotation)

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X @ self.rotation.T + self.translation

    def inverse(self):
        R = self.rotation.T
        q = None
        if self.quat is not None:
            q = self.quat * np.array([-1.0, -1.0, -1.0, 1.0])
        return Pose(R, -R @ self.translation, quat=q)

    def compose(self, other):
        """``self @ other``: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(a: Pose) -> Pose:
    return a.inverse()


def relative(a: Pose, b: Pose) -> Pose:
    """Transform taking camera-``a`` coordinates to camera-``b`` coordinates."""
    return compose(b, inverse(a))


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise GeometryError("image size must be at least 1x1")
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self):
        return (self.height, self.width)

    def as_tuple(self):
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def in_bounds(self, p, tol=BOUNDS_TOL):
        p = np.asarray(p, dtype=np.float64)
        u, v = p[..., 0], p[..., 1]
        return (u >= -tol) & (u <= self.width - 1 + tol) & (v >= -tol) & (v <= self.height - 1 + tol)

    def project_points(self, X):
        """Vectorised projection without checks; ``X`` is ``(..., 3)``."""
        X = np.asarray(X, dtype=np.float64)
        z = X[..., 2]
        return np.stack([self.fx * X[..., 0] / z + self.cx, self.fy * X[..., 1] / z + self.cy], axis=-1)

    def rays(self, p):
        """Camera-frame ray directions with unit z for pixels ``p``."""
        p = np.asarray(p, dtype=np.float64)
        return np.stack(
            [(p[..., 0] - self.cx) / self.fx, (p[..., 1] - self.cy) / self.fy, np.ones(p.shape[:-1])],
            axis=-1,
        )

    def pixel_grid(self, stride=1):
        """Integer pixel coordinates on a stride grid, row-major, shape ``(N, 2)``."""
        vs, us = np.mgrid[0 : self.height : stride, 0 : self.width : stride]
        return np.stack([us.ravel(), vs.ravel()], axis=-1)


def project(cam: Camera, x_cam) -> np.ndarray:
    x = np.asarray(x_cam, dtype=np.float64)
    if x[2] <= 0:
        raise BehindCamera(f"point {x} has z <= 0")
    return cam.project_points(x)


def backproject(cam: Camera, p, depth: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not (np.isfinite(depth) and depth > 0):
        raise GeometryError(f"depth must be positive, got {depth}")
    if not cam.in_bounds(p):
        raise OutOfBounds(f"pixel {p} outside {cam.width}x{cam.height} image")
    return cam.rays(p) * depth


class DepthMap:
    """Z-depth image with an explicit validity mask.

    Invalid pixels carry ``0.0`` in ``values``. Both arrays are read-only.
    """

    __slots__ = ("values", "valid")

    def __init__(self, values, valid=None):
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise GeometryError("depth map must be 2-D")
        ok = np.isfinite(values) & (values > 0)
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != values.shape:
                raise GeometryError("mask shape does not match depth values")
            if np.any(valid & ~ok):
                raise GeometryError("valid depths must be finite and positive")
            ok = valid.copy()
        values[~ok] = 0.0
        values.setflags(write=False)
        ok.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", ok)

    def __setattr__(self, name, value):
        raise AttributeError("DepthMap is immutable")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def matches(self, cam: Camera):
        return self.shape == cam.shape

    def as_array(self, invalid=np.nan):
        out = self.values.copy()
        out[~self.valid] = invalid
        return out

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values) and np.array_equal(self.valid, other.valid))

    __hash__ = None

    def __repr__(self):
        return f"DepthMap({self.width}x{self.height}, valid={int(self.valid.sum())})"


@dataclass(frozen=True, eq=False)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        H = _frozen(self.matrix, (3, 3))
        scale = np.max(np.abs(H))
        if not np.isfinite(scale) or scale == 0 or abs(np.linalg.det(H / scale)) <= 1e-12:
            raise GeometryError("homography is not invertible")
        object.__setattr__(self, "matrix", H)

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def map_points(self, p):
        """Vectorised mapping; returns ``(points, w)`` with raw homogeneous ``w``."""
        p = np.asarray(p, dtype=np.float64)
        ph = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1) @ self.matrix.T
        w = ph[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            return ph[..., :2] / w[..., None], w


def apply_homography(H: Homography, p) -> np.ndarray:
    q, w = H.map_points(np.asarray(p, dtype=np.float64))
    if abs(w) <= 1e-12:
        raise PointAtInfinity(f"{p} maps to infinity")
    return q


@dataclass(frozen=True)
class AngularError:
    rotation_deg: float
    translation_deg: float | None

    @property
    def translation_defined(self):
        return self.translation_deg is not None

    @property
    def pose_error_deg(self):
        if self.translation_deg is None:
            return self.rotation_deg
        return max(self.rotation_deg, self.translation_deg)


def angle_between_deg(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b)))


def pose_error(gt: Pose, est: Pose) -> AngularError:
    """Angular error between two relative poses of the same frame pair.

    Translation is compared as a direction only. A ground-truth baseline
    shorter than ``MIN_BASELINE`` leaves the translation error undefined and
    the pose error falls back to rotation alone. A zero estimated
    translation carries no direction and scores 90 degrees.
    """
    rot = rotation_angle_deg(gt.rotation.T @ est.rotation)
    if np.linalg.norm(gt.translation) < MIN_BASELINE:
        return AngularError(rot, None)
    if np.linalg.norm(est.translation) < MIN_BASELINE:
        return AngularError(rot, 90.0)
    return AngularError(rot, angle_between_deg(gt.translation, est.translation))
