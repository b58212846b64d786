import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from icdc.errors import BehindCamera, GeometryError, OutOfBounds, PointAtInfinity
from icdc.geometry import (
    Camera, DepthMap, Homography, Pose, apply_homography, axis_angle_matrix, backproject,
    compose, inverse, matrix_to_quat, pose_error, project, quat_to_matrix, relative,
    rotation_angle_deg,
)

quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 0.1)
vecs = st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3)


def random_pose(q, t):
    return Pose.from_quaternion(q, t)


def test_project_example():
    # [DERIVED] u = fx*x/z + cx = 100*0.5 + 50
    cam = Camera(100, 100, 50, 50, 101, 101)
    np.testing.assert_allclose(project(cam, [1.0, 0.0, 2.0]), [100.0, 50.0], atol=1e-12)


def test_project_behind_raises():
    cam = Camera(100, 100, 50, 50, 101, 101)
    with pytest.raises(BehindCamera):
        project(cam, [0.0, 0.0, -1.0])
    with pytest.raises(BehindCamera):
        project(cam, [0.0, 0.0, 0.0])


def test_backproject_validation():
    cam = Camera(100, 100, 50, 50, 101, 101)
    with pytest.raises(GeometryError):
        backproject(cam, [10, 10], 0.0)
    with pytest.raises(OutOfBounds):
        backproject(cam, [101.5, 10], 1.0)
    # the last pixel centre is inside
    backproject(cam, [100.0, 100.0], 1.0)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 100))
def test_backproject_project_roundtrip(u, v, d):
    cam = Camera(120, 90, 50, 48, 101, 101)
    X = backproject(cam, [u, v], d)
    assert X[2] == pytest.approx(d, rel=1e-12)
    np.testing.assert_allclose(project(cam, X), [u, v], atol=1e-9)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(GeometryError):
        Camera(0, 100, 50, 50, 10, 10)
    with pytest.raises(GeometryError):
        Camera(100, 100, 50, 50, 0, 10)


def test_quaternion_matches_scipy():
    q = np.array([0.1, -0.4, 0.3, 0.8])
    q /= np.linalg.norm(q)
    np.testing.assert_allclose(quat_to_matrix(q), Rotation.from_quat(q).as_matrix(), atol=1e-14)


@given(quats, vecs)
def test_inverse_and_compose_identity(q, t):
    a = random_pose(q, t)
    assert compose(a, inverse(a)).allclose(Pose.identity(), atol=1e-9)
    assert compose(inverse(a), a).allclose(Pose.identity(), atol=1e-9)


@given(quats, vecs, quats, vecs, quats, vecs)
@settings(max_examples=50)
def test_compose_associative(q1, t1, q2, t2, q3, t3):
    a, b, c = random_pose(q1, t1), random_pose(q2, t2), random_pose(q3, t3)
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert left.allclose(right, atol=1e-8)


@given(quats, vecs, quats, vecs)
@settings(max_examples=50)
def test_relative_maps_camera_frames(q1, t1, q2, t2):
    a, b = random_pose(q1, t1), random_pose(q2, t2)
    X = np.array([[0.3, -1.2, 4.0], [2.0, 2.0, -3.0]])
    np.testing.assert_allclose(relative(a, b).apply(a.apply(X)), b.apply(X), atol=1e-9)


@given(quats)
def test_matrix_to_quat_roundtrip(q):
    R = quat_to_matrix(np.asarray(q) / np.linalg.norm(q))
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(R)), R, atol=1e-12)
    assert matrix_to_quat(R)[3] >= 0


def test_pose_rejects_non_rotation():
    with pytest.raises(GeometryError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        Pose(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(GeometryError):
        Pose(np.eye(3), [np.nan, 0, 0])


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


def test_pose_center():
    R = axis_angle_matrix([0, 1, 0], 30)
    p = Pose.from_center(R, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(p.center, [1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(p.apply(p.center), 0, atol=1e-12)


def test_pose_error_rotation_example():
    # [DERIVED] a 10 degree rotation about z against identity
    gt = Pose(np.eye(3), [1.0, 0, 0])
    est = Pose(axis_angle_matrix([0, 0, 1], 10.0), [1.0, 0, 0])
    err = pose_error(gt, est)
    assert err.rotation_deg == pytest.approx(10.0, abs=1e-9)
    assert err.translation_deg == pytest.approx(0.0, abs=1e-6)
    assert err.pose_error_deg == pytest.approx(10.0, abs=1e-9)


def test_pose_error_orthogonal_translation():
    err = pose_error(Pose(np.eye(3), [1.0, 0, 0]), Pose(np.eye(3), [0, 3.0, 0]))
    assert err.translation_deg == pytest.approx(90.0, abs=1e-9)
    assert err.pose_error_deg == pytest.approx(90.0, abs=1e-9)


def test_pose_error_scale_invariant_translation():
    err = pose_error(Pose(np.eye(3), [1.0, 2, 3]), Pose(np.eye(3), [10.0, 20, 30]))
    assert err.translation_deg == pytest.approx(0.0, abs=1e-6)


def test_pose_error_undefined_translation():
    err = pose_error(Pose(np.eye(3), np.zeros(3)), Pose(axis_angle_matrix([1, 0, 0], 3), [1.0, 0, 0]))
    assert not err.translation_defined
    assert err.pose_error_deg == pytest.approx(3.0, abs=1e-9)


def test_pose_error_zero_estimate_scores_ninety():
    err = pose_error(Pose(np.eye(3), [1.0, 0, 0]), Pose(np.eye(3), np.zeros(3)))
    assert err.translation_deg == 90.0


@given(st.floats(0, 179.9), vecs.filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_rotation_angle_of_axis_angle(angle, axis):
    assert rotation_angle_deg(axis_angle_matrix(axis, angle)) == pytest.approx(angle, abs=1e-5)


def test_homography_roundtrip():
    H = Homography(np.array([[1.1, 0.02, 3.0], [-0.01, 0.95, -2.0], [1e-4, 2e-4, 1.0]]))
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 300, (500, 2))
    q, _ = H.map_points(p)
    back, _ = H.inverse().map_points(q)
    assert np.max(np.abs(back - p)) < 1e-9


def test_homography_point_at_infinity():
    H = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
    with pytest.raises(PointAtInfinity):
        apply_homography(H, [-1.0, 5.0])
    np.testing.assert_allclose(apply_homography(H, [1.0, 4.0]), [0.5, 2.0])


def test_singular_homography_rejected():
    with pytest.raises(GeometryError):
        Homography(np.ones((3, 3)))


def test_depth_map_validity():
    d = DepthMap([[1.0, 0.0], [np.nan, -2.0]])
    assert d.valid.tolist() == [[True, False], [False, False]]
    assert d.values[1, 1] == 0.0
    with pytest.raises(AttributeError):
        d.values = None
    with pytest.raises(GeometryError):
        DepthMap([[1.0, 0.0]], valid=[[True, True]])
    assert math.isnan(d.as_array()[0, 1])
