"""Compare the numba and pure-numpy kernel paths on the corridor preset.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once to warm up (and compile), then ``--repeat`` times; the
best wall time per backend is reported along with the maximum absolute
difference between backend outputs.
"""
import argparse
import time

import numpy as np

from icdc import kernels, scene
from icdc.correspondence import _intr
from icdc.essential import draw_samples, normalized_coords
from icdc.geometry import Pose, axis_angle_matrix, compose, relative


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def setup():
    sc = scene.corridor_scene()
    cam = scene.corridor_camera()
    pose_i = scene.look_along([0, 0, 0], [0, 0, 1])
    pose_j = scene.look_along([0, 0, 1], [0, 0, 1])
    grid = cam.pixel_grid().astype(np.float64)
    dirs = cam.rays(grid) @ pose_i.rotation
    d_i = scene.render_depth(sc, cam, pose_i)
    d_j = scene.render_depth(sc, cam, pose_j)
    T = relative(pose_i, pose_j)
    valid = d_i.valid[grid[:, 1].astype(int), grid[:, 0].astype(int)]
    pix = np.ascontiguousarray(grid[valid])
    depth = np.ascontiguousarray(d_i.values[pix[:, 1].astype(int), pix[:, 0].astype(int)])
    icdc_args = (pix, depth, _intr(cam), _intr(cam), np.ascontiguousarray(T.rotation),
                 np.ascontiguousarray(T.translation), d_j.values, d_j.valid)

    rng = np.random.default_rng(0)
    T_rp = compose(Pose(axis_angle_matrix([0, 1, 0], 10.0), np.array([1.0, 0.0, 0.0])), pose_i)
    p = rng.uniform([0, 0], [319, 239], (2000, 2))
    q, st = scene.analytic_flow(sc, cam, pose_i, cam, T_rp, p)
    ok = st == scene.FLOW_OK
    p, q = p[ok][:1000], q[ok][:1000]
    q = q + rng.normal(0, 1.0, q.shape)
    q[:300] = rng.uniform([0, 0], [319, 239], (300, 2))
    x1, x2 = normalized_coords(cam, p), normalized_coords(cam, q)
    samples = draw_samples(len(x1), 2000, np.random.default_rng(1))
    # confidence close to 1 disables the early exit so both paths do all 2000 fits
    ransac_args = (x1, x2, samples, 1.0 / cam.fx, 1.0 - 1e-12)
    return {
        "cast_rays": ((pose_i.center[None, :].repeat(len(dirs), 0), dirs, sc._planes, sc._boxes),
                      kernels.cast_rays_nb, kernels.cast_rays_np),
        "icdc_pixels": (icdc_args, kernels.icdc_pixels_nb, kernels.icdc_pixels_np),
        "ransac_essential": (ransac_args, kernels.ransac_essential_nb, kernels.ransac_essential_np),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    both = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return np.inf
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<18}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, (fargs, nb, np_) in setup().items():
        t_nb = best_time(lambda: nb(*fargs), args.repeat)
        t_np = best_time(lambda: np_(*fargs), args.repeat)
        diff = max_diff(nb(*fargs), np_(*fargs))
        print(f"{name:<18}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
