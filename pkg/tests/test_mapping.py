import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdc import scene
from icdc.errors import DegenerateGeometry, DegeneratePointcloud, FormatError, UnknownFrame
from icdc.geometry import Camera, Pose, axis_angle_matrix
from icdc.mapping import (
    BODY_DIAGONAL, BoxHierarchy, MultiTrajectoryMap, align_block, extract_sparse_depth, load_map,
    max_pairwise_distance, partition_blocks, principal_axis, rotation_between, save_map, triangulate,
)

CAM = Camera(500.0, 500.0, 319.5, 239.5, 640, 480)


def obs(pose, X):
    return (CAM, pose, CAM.project_points(pose.apply(X)))


def test_triangulate_two_views():
    X = np.array([0.0, 0.0, 10.0])
    a, b = Pose.identity(), Pose(np.eye(3), [-1.0, 0.0, 0.0])
    res = triangulate([obs(a, X), obs(b, X)])
    assert np.linalg.norm(res.point - X) < 1e-6
    assert res.residual_px < 1e-6


def test_triangulate_zero_baseline():
    X = np.array([0.5, 0.2, 10.0])
    with pytest.raises(DegenerateGeometry):
        triangulate([obs(Pose.identity(), X), obs(Pose.identity(), X)])
    with pytest.raises(DegenerateGeometry):
        triangulate([obs(Pose.identity(), X)])


def test_triangulate_behind_camera():
    X = np.array([0.0, 0.0, 10.0])
    # a camera looking away from the point still yields consistent DLT rows
    back = Pose(axis_angle_matrix([0, 1, 0], 180.0), [0.3, 0.0, 0.0])
    front = Pose(np.eye(3), [-1.0, 0.0, 0.0])
    assert back.apply(X)[2] < 0
    with pytest.raises(DegenerateGeometry):
        triangulate([obs(Pose.identity(), X), obs(back, X), obs(front, X)])


def test_triangulate_noisy_monte_carlo():
    rng = np.random.default_rng(42)
    X = np.array([0.3, -0.2, 10.0])
    poses = [Pose(np.eye(3), [-x, 0.0, 0.0]) for x in np.linspace(-2, 2, 5)]
    errs = []
    for _ in range(200):
        o = [(c, p, px + rng.normal(0, 0.5, 2)) for c, p, px in (obs(p, X) for p in poses)]
        errs.append(np.linalg.norm(triangulate(o).point - X))
    assert np.mean(errs) < 0.05


def toy_map():
    mtm = MultiTrajectoryMap()
    poses = {
        "f0": Pose.identity(),
        "f1": Pose(axis_angle_matrix([0, 1, 0], 5.0), [-0.5, 0.0, 0.2]),
        "f2": Pose(axis_angle_matrix([1, 0, 0], -3.0), [0.4, 0.1, -1.0]),
    }
    pts = {7: np.array([0.0, 0.0, 7.0]), 8: np.array([1.0, 0.5, 9.0]), 9: np.array([0.0, 0.0, -3.0])}
    for k, X in pts.items():
        mtm.add_point(k, X)
    for i, (fid, pose) in enumerate(poses.items()):
        mtm.add_frame(fid, pose, CAM, "A" if i < 2 else "B")
        ids = [7, 8]
        xy = CAM.project_points(pose.apply(np.array([pts[k] for k in ids])))
        mtm.set_keypoints(fid, np.vstack([xy, [[5.0, 5.0]]]), [np.nan, np.nan, np.nan], ids + [9])
    return mtm, poses, pts


def test_extract_sparse_depth_hand_values():
    mtm, poses, pts = toy_map()
    got = extract_sparse_depth(mtm, "f0")
    assert [d for _, d in got] == [7.0, 9.0]
    for fid, pose in poses.items():
        depths = [d for _, d in extract_sparse_depth(mtm, fid)]
        # [DERIVED] z of R X + t, evaluated row by row
        expect = [float(pose.rotation[2] @ pts[k] + pose.translation[2]) for k in (7, 8)]
        np.testing.assert_allclose(depths, expect, atol=1e-9)
    with pytest.raises(UnknownFrame):
        extract_sparse_depth(mtm, "nope")


def test_triangulate_then_extract_roundtrip():
    mtm, poses, pts = toy_map()
    X = triangulate([obs(p, pts[8]) for p in poses.values()]).point
    mtm.add_point(8, X)
    depths = dict(zip([7, 8], [d for _, d in extract_sparse_depth(mtm, "f1")]))
    assert abs(depths[8] - (poses["f1"].apply(pts[8])[2])) < 1e-6


def test_map_roundtrip_lossless(tmp_path, corridor):
    cam = scene.corridor_camera()
    mtm = scene.build_map(corridor, cam, {"A": scene.straight_trajectory(3),
                                          "B": scene.straight_trajectory(2, start=(0.5, 0, 0.3))},
                          density=0.3)
    save_map(tmp_path / "m.txt", mtm, meta={"seed": 0})
    back = load_map(tmp_path / "m.txt")
    save_map(tmp_path / "m2.txt", back, meta={"seed": 0})
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "m2.txt").read_bytes()
    for fid in mtm.frames:
        assert back.frames[fid].pose == mtm.frames[fid].pose
        assert back.frames[fid].label == mtm.frames[fid].label
        assert np.array_equal(back.keypoints[fid].xy, mtm.keypoints[fid].xy)
    assert all(np.array_equal(back.points3d[k], v) for k, v in mtm.points3d.items())


@pytest.mark.parametrize("body", [
    "[frames]\nf0 A 0 0 0 0 0 0 1 9\n",
    "[cameras]\n0 1 1 1 1 2 2\n[frames]\nf0 A 0 0 0 0 0 0 1 0\n[keypoints]\nf0 1 1 -1 5\n",
    "[bogus]\n",
    "[cameras]\n0 1 1 1 1 2 2\n[frames]\nf0 A 0 0 0 0 0 0 1 0\n[keypoints]\nf0 1 1 3 0\n[points3d]\n0 0 0 5\n",
])
def test_map_format_errors(tmp_path, body):
    (tmp_path / "m.txt").write_text(body)
    with pytest.raises(FormatError):
        load_map(tmp_path / "m.txt")


def line_map(zs, label="A", x=0.0):
    mtm = MultiTrajectoryMap()
    for k, z in enumerate(zs):
        mtm.add_frame(f"{label}_{k:04d}", scene.look_along([x, 0, z], [0, 0, 1]), CAM, label)
    return mtm


def greedy_oracle(zs, limit=64.0):
    """Independent simulation of in-order opening on a monotone line."""
    blocks, start = [[0]], zs[0]
    for i in range(1, len(zs)):
        if abs(zs[i] - start) > limit:
            blocks.append([i])
            start = zs[i]
        else:
            blocks[-1].append(i)
    return blocks


def test_straight_hundred_metres_gives_two_blocks():
    zs = np.arange(101.0)
    blocks = partition_blocks(line_map(zs), "A")
    oracle = greedy_oracle(zs)
    assert len(blocks) == len(oracle) == 2
    assert [len(b.members) for b in blocks] == [len(o) for o in oracle] == [65, 36]
    assert blocks[0].extent == pytest.approx(64.0) and blocks[1].extent == pytest.approx(35.0)
    # [DERIVED] 20 % of a 64 m span is 6.4 m per block, half on each side
    assert blocks[0].buffer == tuple(f"A_{k:04d}" for k in range(65, 71))
    assert blocks[1].buffer == tuple(f"A_{k:04d}" for k in range(62, 65))


def test_short_isolated_trajectory_single_block():
    blocks = partition_blocks(line_map(np.arange(11.0)), "A")
    assert len(blocks) == 1 and blocks[0].buffer == ()


def test_short_tail_is_rebalanced():
    blocks = partition_blocks(line_map(np.arange(71.0)), "A")
    sizes = [b.extent for b in blocks]
    assert len(blocks) == 2 and max(sizes) <= 64 and min(sizes) >= 16


def test_revisits_land_in_earlier_buffer():
    mtm = MultiTrajectoryMap()
    for k, pose in enumerate(scene.out_and_back_trajectory(100)):
        mtm.add_frame(f"A_{k:04d}", pose, CAM, "A")
    blocks = partition_blocks(mtm, "A")
    first = blocks[0]
    P = {f: mtm.frames[f].pose.center for f in mtm.frames}
    later = [f for b in blocks[1:] for f in b.members]
    inside = [f for f in later if first.contains(P[f])]
    revisits = [f for f in inside if int(f[2:]) > 100]
    assert revisits
    assert set(inside) <= set(first.buffer)


walks = st.lists(st.tuples(st.floats(-8, 8), st.floats(-8, 8)), min_size=1, max_size=80)


@given(walks)
@settings(max_examples=40, deadline=None)
def test_partition_cover_bound_and_buffer(steps):
    pos = np.cumsum(np.array([[dx, 0.0, dz] for dx, dz in steps]), axis=0)
    mtm = MultiTrajectoryMap()
    for k, c in enumerate(pos):
        mtm.add_frame(f"A_{k:04d}", scene.look_along(c, [0, 0, 1]), CAM, "A")
    blocks = partition_blocks(mtm, "A")
    members = [f for b in blocks for f in b.members]
    assert sorted(members) == sorted(mtm.frames)
    assert len(set(members)) == len(members)
    for b in blocks:
        assert b.extent <= 64.0 + 1e-6
        assert max_pairwise_distance(mtm.positions(b.members)) <= 64.0 + 1e-6
        assert not set(b.buffer) & set(b.members)
        np.testing.assert_allclose(b.buffer_hi - b.buffer_lo, 1.2 * (b.core_hi - b.core_lo), atol=1e-9)


def cloud_map(X):
    """One frame at the centroid observing every point."""
    mtm = MultiTrajectoryMap()
    mtm.add_frame("A_0000", scene.look_along(X.mean(0), [0, 0, 1]), CAM, "A")
    ids = np.arange(len(X))
    for i, x in zip(ids, X):
        mtm.add_point(int(i), x)
    mtm.set_keypoints("A_0000", np.zeros((len(X), 2)), None, ids)
    return mtm


def test_alignment_body_diagonal_and_distances():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 3)) * [10.0, 2.0, 1.0] + [5.0, -1.0, 3.0]
    mtm = cloud_map(X)
    blk = align_block(partition_blocks(mtm, "A")[0], mtm)
    al = blk.alignment
    assert abs(al.rotation @ al.principal_axis @ BODY_DIAGONAL) >= 0.999999
    Y = al.apply(X)
    i, j = rng.integers(0, len(X), (2, 500))
    keep = i != j
    dx = np.linalg.norm(X[i] - X[j], axis=1)[keep]
    dy = np.linalg.norm(Y[i] - Y[j], axis=1)[keep]
    assert np.max(np.abs(dy / (al.scale * dx) - 1.0)) < 1e-9
    assert al.scale == pytest.approx(1 / 3.0)
    # coordinate-wise median of the box-frame cloud sits at the centre
    np.testing.assert_allclose(np.median(Y, axis=0), 0.0, atol=1e-12)
    again = align_block(partition_blocks(mtm, "A")[0], mtm).alignment
    assert np.array_equal(again.rotation, al.rotation)


def test_already_aligned_cloud_keeps_identity():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 3)) * 0.5 + rng.normal(size=(300, 1)) * 10 * BODY_DIAGONAL
    e = principal_axis(X)
    R = rotation_between(e, BODY_DIAGONAL)
    assert np.max(np.abs(R - np.eye(3))) < 0.05
    assert np.max(np.abs(rotation_between(BODY_DIAGONAL, BODY_DIAGONAL) - np.eye(3))) < 1e-6


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_rotation_between_is_rotation(v):
    a = np.asarray(v) / np.linalg.norm(v)
    for b in (BODY_DIAGONAL, -a):
        R = rotation_between(a, b)
        np.testing.assert_allclose(R @ a, b, atol=1e-9)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_principal_axis_sign_and_degeneracy():
    X = np.array([[t, 0.0, 0.0] for t in range(-5, 6)]) * -1.0
    with pytest.raises(DegeneratePointcloud):
        principal_axis(X)
    X = np.c_[np.arange(20.0), np.sin(np.arange(20.0)), np.zeros(20)] * -1
    e = principal_axis(X)
    assert e[np.argmax(np.abs(e))] > 0
    with pytest.raises(DegeneratePointcloud):
        principal_axis(X[:2])


def test_box_hierarchy_spans():
    h = BoxHierarchy()
    assert [h.span(s) for s in h.scales] == [3.0 * s for s in (1, 2, 4, 8, 16, 32, 64)]
    assert h.span(64) == 192.0


def test_points_beyond_range_are_dropped():
    X = np.vstack([np.random.default_rng(0).normal(size=(50, 3)) * [5, 1, 1], [[500.0, 0.0, 0.0]]])
    mtm = cloud_map(X)
    blk = align_block(partition_blocks(mtm, "A")[0], mtm)
    assert blk.alignment.n_points == 50


def test_empty_label_rejected():
    mtm = MultiTrajectoryMap()
    with pytest.raises(ValueError):
        mtm.add_frame("x", Pose.identity(), CAM, "")
    assert partition_blocks(mtm, "A") == []
