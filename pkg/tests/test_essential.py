import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdc import scene
from icdc.correspondence import CorrespondenceSet
from icdc.errors import NoConsensus, TooFewCorrespondences, TranslationUndefined
from icdc.essential import (
    RansacConfig, choose_by_cheirality, decompose_essential, essential_from_pose,
    estimate_from_set, estimate_relative_pose, normalized_coords, refine_pose,
)
from icdc.geometry import Pose, axis_angle_matrix, compose, pose_error, relative

GT = Pose(axis_angle_matrix([0, 1, 0], 10.0), [1.0, 0.0, 0.0])


def corridor_pairs(n=200, seed=0, sigma=0.0, outliers=0.0):
    sc, cam = scene.corridor_scene(), scene.corridor_camera()
    pose_i = scene.look_along([0, 0, 0], [0, 0, 1])
    pose_j = compose(GT, pose_i)
    rng = np.random.default_rng(seed)
    p = rng.uniform([0, 0], [cam.width - 1, cam.height - 1], (6 * n, 2))
    q, st_ = scene.analytic_flow(sc, cam, pose_i, cam, pose_j, p)
    ok = st_ == scene.FLOW_OK
    p, q = p[ok][:n], q[ok][:n]
    q = q + rng.normal(0.0, sigma, q.shape) if sigma else q
    k = int(round(outliers * n))
    q[:k] = rng.uniform([0, 0], [cam.width - 1, cam.height - 1], (k, 2))
    return p, q, cam, relative(pose_i, pose_j)


def test_exact_correspondences(backend):
    p, q, cam, gt = corridor_pairs()
    res = estimate_relative_pose(p, q, cam, cam)
    assert pose_error(gt, res.pose).pose_error_deg < 0.1
    assert res.inliers.all()
    assert np.linalg.norm(res.pose.translation) == pytest.approx(1.0)


def test_outliers_flagged():
    p, q, cam, gt = corridor_pairs(300, seed=2, sigma=0.3, outliers=0.3)
    res = estimate_relative_pose(p, q, cam, cam)
    assert pose_error(gt, res.pose).pose_error_deg < 3.0
    assert res.inliers[:90].mean() < 0.1
    assert res.inliers[90:].mean() > 0.9


def test_backends_agree(monkeypatch):
    from icdc import _accel
    p, q, cam, _ = corridor_pairs(200, seed=5, sigma=0.5, outliers=0.2)
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a = estimate_relative_pose(p, q, cam, cam)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    b = estimate_relative_pose(p, q, cam, cam)
    assert a.iterations == b.iterations
    assert pose_error(a.pose, b.pose).pose_error_deg < 1e-6
    assert np.array_equal(a.inliers, b.inliers)


def test_seeded_determinism():
    p, q, cam, _ = corridor_pairs(150, seed=8, sigma=1.0, outliers=0.3)
    a = estimate_relative_pose(p, q, cam, cam, RansacConfig(seed=4))
    b = estimate_relative_pose(p, q, cam, cam, RansacConfig(seed=4))
    assert a.pose == b.pose


def test_correspondence_set_entry_point():
    p, q, cam, gt = corridor_pairs(100)
    cs = CorrespondenceSet("a", "b", p, q, np.zeros(len(p)), np.zeros(len(p)))
    assert pose_error(gt, estimate_from_set(cs, cam, cam).pose).pose_error_deg < 0.1


def test_zero_baseline_planar_never_silent():
    sc, cam = scene.corridor_scene(), scene.corridor_camera()
    pose_i = scene.look_along([0, 0, 0], [0, 0, 1])
    pose_j = compose(Pose(axis_angle_matrix([0, 1, 0], 5.0), np.zeros(3)), pose_i)
    rng = np.random.default_rng(0)
    # ground plane pixels only
    p = rng.uniform([0, 140], [319, 239], (400, 2))
    q, st_ = scene.analytic_flow(sc, cam, pose_i, cam, pose_j, p)
    ok = st_ == 0
    with pytest.raises((NoConsensus, TranslationUndefined)):
        estimate_relative_pose(p[ok], q[ok], cam, cam)


def test_pure_outliers_no_consensus():
    rng = np.random.default_rng(1)
    cam = scene.corridor_camera()
    p = rng.uniform([0, 0], [319, 239], (60, 2))
    q = rng.uniform([0, 0], [319, 239], (60, 2))
    with pytest.raises(NoConsensus):
        estimate_relative_pose(p, q, cam, cam, RansacConfig(min_inliers=40))


def test_input_validation():
    cam = scene.corridor_camera()
    with pytest.raises(TooFewCorrespondences):
        estimate_relative_pose(np.zeros((7, 2)), np.zeros((7, 2)), cam, cam)
    with pytest.raises(ValueError):
        estimate_relative_pose(np.zeros((9, 2)), np.zeros((8, 2)), cam, cam)
    for bad in ({"threshold_px": 0}, {"confidence": 1.0}, {"min_inliers": 3},
                {"homography_ratio": 0.0}, {"lo_sample": 4}):
        with pytest.raises(ValueError):
            RansacConfig(**bad)
    assert RansacConfig().replace(seed=3).seed == 3


rot = st.tuples(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1),
                st.floats(0, 30))
trans = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1)


@given(rot, trans)
@settings(max_examples=40, deadline=None)
def test_decomposition_contains_truth(r, t):
    R = axis_angle_matrix(r[0], r[1])
    t = np.asarray(t) / np.linalg.norm(t)
    E = essential_from_pose(R, t)
    cands = decompose_essential(E / np.linalg.norm(E))
    assert any(np.allclose(Rc, R, atol=1e-8) and np.allclose(tc, t, atol=1e-8) for Rc, tc in cands)


def test_epipolar_constraint_and_cheirality():
    p, q, cam, gt = corridor_pairs(50)
    x1, x2 = normalized_coords(cam, p), normalized_coords(cam, q)
    t = gt.translation / np.linalg.norm(gt.translation)
    E = essential_from_pose(gt.rotation, t)
    h1 = np.c_[x1, np.ones(len(x1))]
    h2 = np.c_[x2, np.ones(len(x2))]
    assert np.max(np.abs(np.einsum("ij,jk,ik->i", h2, E, h1))) < 1e-12
    (R, tc), votes = choose_by_cheirality(E, x1, x2)
    assert votes == 50
    np.testing.assert_allclose(R, gt.rotation, atol=1e-9)
    np.testing.assert_allclose(tc, t, atol=1e-9)


def test_refine_keeps_exact_solution():
    p, q, cam, gt = corridor_pairs(60)
    x1, x2 = normalized_coords(cam, p), normalized_coords(cam, q)
    t = gt.translation / np.linalg.norm(gt.translation)
    R2, t2 = refine_pose(gt.rotation, t, x1, x2)
    np.testing.assert_allclose(R2, gt.rotation, atol=1e-9)
    np.testing.assert_allclose(t2 / np.linalg.norm(t2), t, atol=1e-9)


@given(rot, trans)
@settings(max_examples=10, deadline=None)
def test_relative_pose_is_frame_equivariant(r, shift):
    rng = np.random.default_rng(0)
    cam = scene.corridor_camera()
    X = rng.uniform([-5, -3, 6], [5, 3, 20], (120, 3))
    pose_i = Pose.identity()
    pose_j = GT
    G = Pose(axis_angle_matrix(r[0], r[1]), 10 * np.asarray(shift))
    pix = lambda pose, pts: cam.project_points(pose.apply(pts))  # noqa: E731
    base = estimate_relative_pose(pix(pose_i, X), pix(pose_j, X), cam, cam)
    # move the world: points by G, poses by G^-1 on the right
    Xg = G.apply(X)
    gi, gj = compose(pose_i, G.inverse()), compose(pose_j, G.inverse())
    moved = estimate_relative_pose(pix(gi, Xg), pix(gj, Xg), cam, cam)
    assert pose_error(base.pose, moved.pose).pose_error_deg < 1e-6
    assert pose_error(relative(gi, gj), moved.pose).pose_error_deg < 0.1
