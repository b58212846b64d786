"""Relative pose from 2D-2D correspondences via the essential matrix."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from . import kernels
from .errors import NoConsensus, TooFewCorrespondences, TranslationUndefined
from .geometry import Pose

SAMPLE_SIZE = 8


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 1.0
    max_iterations: int = 2000
    confidence: float = 0.999
    min_inliers: int = 15
    seed: int = 0
    # Reject when a homography explains this share of the essential inliers.
    # ``None`` disables the check.
    homography_ratio: float | None = 0.9
    # Local optimisation: strongest hypotheses re-examined, non-minimal
    # refits per hypothesis, points per refit, inlier/least-squares rounds.
    lo_starts: int = 10
    lo_inner: int = 20
    lo_sample: int = 32
    refine_rounds: int = 5

    def __post_init__(self):
        if not self.threshold_px > 0:
            raise ValueError("threshold_px must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.min_inliers < SAMPLE_SIZE:
            raise ValueError(f"min_inliers must be >= {SAMPLE_SIZE}")
        if min(self.lo_starts, self.lo_inner, self.refine_rounds) < 0:
            raise ValueError("local optimisation counts must be >= 0")
        if self.lo_sample < SAMPLE_SIZE:
            raise ValueError(f"lo_sample must be >= {SAMPLE_SIZE}")
        if self.homography_ratio is not None and not 0.0 < self.homography_ratio <= 1.0:
            raise ValueError("homography_ratio must lie in (0, 1]")

    def replace(self, **kw):
        return RansacConfig(**{**self.__dict__, **kw})


class RelativePose(NamedTuple):
    pose: Pose
    inliers: np.ndarray
    iterations: int


def normalized_coords(cam, p):
    p = np.asarray(p, dtype=np.float64)
    return np.column_stack([(p[:, 0] - cam.cx) / cam.fx, (p[:, 1] - cam.cy) / cam.fy])


def draw_samples(n, iterations, rng, size=SAMPLE_SIZE):
    """Minimal index samples, drawn up front so every backend sees the same ones."""
    out = np.empty((iterations, size), dtype=np.int64)
    for k in range(iterations):
        out[k] = rng.choice(n, size, replace=False)
    return out


def _homography_dlt(a, b):
    """Batched 4-point DLT. ``a``, ``b`` are ``(..., 4, 2)``."""
    z = np.zeros(a.shape[:-1])
    o = np.ones(a.shape[:-1])
    ax, ay, bx, by = a[..., 0], a[..., 1], b[..., 0], b[..., 1]
    r1 = np.stack([ax, ay, o, z, z, z, -bx * ax, -bx * ay, -bx], axis=-1)
    r2 = np.stack([z, z, z, ax, ay, o, -by * ax, -by * ay, -by], axis=-1)
    A = np.concatenate([r1, r2], axis=-2)
    _, _, vt = np.linalg.svd(A)
    return vt[..., -1, :].reshape(a.shape[:-2] + (3, 3))


def homography_inliers(x1, x2, thresh, iterations, rng, chunk=128):
    """Best inlier count of a plain homography RANSAC (transfer error)."""
    n = x1.shape[0]
    if n < 4:
        return 0
    samples = draw_samples(n, iterations, rng, size=4)
    x1h = np.column_stack([x1, np.ones(n)])
    best = 0
    for s in range(0, iterations, chunk):
        idx = samples[s:s + chunk]
        H = _homography_dlt(x1[idx], x2[idx])
        m = x1h @ np.swapaxes(H, -1, -2)
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = m[..., :2] / m[..., 2:3]
            err = ((proj - x2) ** 2).sum(-1)
        counts = (np.nan_to_num(err, nan=np.inf) <= thresh * thresh).sum(-1)
        best = max(best, int(counts.max()))
        if best == n:
            break
    return best


def triangulate_depths(R, t, x1, x2):
    """Depths of each ray pair in both cameras (least squares, midpoint style)."""
    a = np.column_stack([x1, np.ones(len(x1))]) @ R.T
    b = np.column_stack([x2, np.ones(len(x2))])
    # solve lam1 * a - lam2 * b = -t
    aa = (a * a).sum(1)
    bb = (b * b).sum(1)
    ab = (a * b).sum(1)
    at = a @ t
    bt = b @ t
    det = ab * ab - aa * bb
    with np.errstate(divide="ignore", invalid="ignore"):
        lam1 = (bb * at - ab * bt) / det
        lam2 = (ab * at - aa * bt) / det
    return lam1, lam2


def decompose_essential(E):
    """The four ``(R, t)`` candidates of an essential matrix, ``t`` unit length."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def choose_by_cheirality(E, x1, x2):
    best, best_votes = None, -1
    for R, t in decompose_essential(E):
        l1, l2 = triangulate_depths(R, t, x1, x2)
        votes = int(np.count_nonzero((l1 > 0) & (l2 > 0)))
        if votes > best_votes:
            best, best_votes = (R, t), votes
    return best, best_votes


def _msac_cost(E, x1, x2, thresh2):
    return float(np.minimum(kernels.sampson_sq_np(E, x1, x2), thresh2).sum())


def _refit(R, t, x1, x2, thresh2, rounds):
    """Alternate inlier selection and Sampson least squares."""
    mask = None
    for _ in range(rounds):
        new = kernels.sampson_sq_np(essential_from_pose(R, t), x1, x2) <= thresh2
        if new.sum() < SAMPLE_SIZE or (mask is not None and np.array_equal(new, mask)):
            break
        mask = new
        R, t = refine_pose(R, t, x1[mask], x2[mask])
    return R, t


def _local_starts(E, x1, x2, thresh2, config, rng):
    """The hypothesis itself plus the best of a few non-minimal refits on its inliers."""
    idx = np.flatnonzero(kernels.sampson_sq_np(E, x1, x2) <= thresh2)
    if len(idx) < 2 * SAMPLE_SIZE or config.lo_inner == 0:
        return [E]
    size = min(len(idx) // 2, config.lo_sample)
    sub = np.stack([rng.choice(idx, size, replace=False) for _ in range(config.lo_inner)])
    Es = kernels.eight_point_np(x1[sub], x2[sub])
    cost = np.minimum(kernels.sampson_sq_np(Es, x1, x2), thresh2).sum(-1)
    return [E, Es[int(np.argmin(cost))]]


def estimate_relative_pose(p, q, cam_i, cam_j, config=None):
    """Pose of camera J relative to camera I (``X_j = R X_i + t``), ``|t| = 1``.

    ``p`` holds pixels in I and ``q`` their matches in J. The RANSAC loop runs
    in the compiled kernel; the strongest hypotheses are then locally
    optimised and refit on their inliers, and the lowest truncated Sampson
    cost wins. Raises TooFewCorrespondences below eight pairs, NoConsensus
    when no model gathers ``min_inliers`` support, and TranslationUndefined
    when the matches are explained by a homography (no usable parallax).
    """
    config = config or RansacConfig()
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(q):
        raise ValueError("p and q differ in length")
    n = len(p)
    if n < SAMPLE_SIZE:
        raise TooFewCorrespondences(f"need >= {SAMPLE_SIZE} correspondences, got {n}")
    x1 = normalized_coords(cam_i, p)
    x2 = normalized_coords(cam_j, q)
    focal = 0.25 * (cam_i.fx + cam_i.fy + cam_j.fx + cam_j.fy)
    thresh = config.threshold_px / focal
    thresh2 = thresh * thresh

    rng = np.random.default_rng(config.seed)
    samples = draw_samples(n, config.max_iterations, rng)
    E0, count, iterations = kernels.ransac_essential(x1, x2, samples, thresh, config.confidence)
    if count < config.min_inliers:
        raise NoConsensus(f"best model has {count} inliers, need {config.min_inliers}")

    starts = [E0]
    if config.lo_starts > 0 and iterations > 1:
        Es = kernels.eight_point_np(x1[samples[:iterations]], x2[samples[:iterations]])
        cost = np.minimum(kernels.sampson_sq_np(Es, x1, x2), thresh2).sum(-1)
        starts += [Es[k] for k in np.argsort(cost, kind="stable")[:config.lo_starts]]

    best = None
    for E_start in starts:
        for E in _local_starts(E_start, x1, x2, thresh2, config, rng):
            mask = kernels.sampson_sq_np(E, x1, x2) <= thresh2
            if mask.sum() < SAMPLE_SIZE:
                continue
            (R, t), _ = choose_by_cheirality(E, x1[mask], x2[mask])
            R, t = _refit(_orthonormalize(R), t, x1, x2, thresh2, config.refine_rounds)
            c = _msac_cost(essential_from_pose(R, t), x1, x2, thresh2)
            if best is None or c < best[0]:
                best = (c, R, t)
    if best is None:
        raise NoConsensus("no hypothesis survived refinement")
    E = essential_from_pose(best[1], best[2])
    mask = kernels.sampson_sq_np(E, x1, x2) <= thresh2
    n_in = int(mask.sum())
    if n_in < config.min_inliers:
        raise NoConsensus(f"refined model has {n_in} inliers, need {config.min_inliers}")

    if config.homography_ratio is not None:
        h_count = homography_inliers(x1, x2, thresh, max(1, config.max_iterations // 4), rng)
        if h_count >= config.homography_ratio * n_in:
            raise TranslationUndefined(
                f"homography explains {h_count} of {n_in} essential inliers; "
                "translation direction is not observable")

    # refinement cannot tell t from -t; settle the sign by cheirality again
    (R, t), votes = choose_by_cheirality(E, x1[mask], x2[mask])
    if votes < config.min_inliers:
        raise NoConsensus(f"only {votes} inliers in front of both cameras")
    l1, l2 = triangulate_depths(R, t, x1, x2)
    mask &= (l1 > 0) & (l2 > 0)
    return RelativePose(Pose(_orthonormalize(R), t / np.linalg.norm(t)), mask, int(iterations))


def estimate_from_set(cs, cam_i, cam_j, config=None):
    """``estimate_relative_pose`` on the pixel pairs of a CorrespondenceSet."""
    return estimate_relative_pose(cs.p, cs.q, cam_i, cam_j, config)


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def essential_from_pose(R, t):
    return skew(t) @ R


def _tangent_basis(t):
    a = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(t, a)
    u /= np.linalg.norm(u)
    return u, np.cross(t, u)


def refine_pose(R, t, x1, x2):
    """Minimise signed Sampson residuals over rotation and translation direction."""
    t = t / np.linalg.norm(t)
    u, v = _tangent_basis(t)
    x1h = np.column_stack([x1, np.ones(len(x1))])
    x2h = np.column_stack([x2, np.ones(len(x2))])

    def unpack(z):
        Rz = Rotation.from_rotvec(z[:3]).as_matrix() @ R
        tz = t + z[3] * u + z[4] * v
        return Rz, tz / np.linalg.norm(tz)

    def residuals(z):
        E = essential_from_pose(*unpack(z))
        Ex1 = x1h @ E.T
        Etx2 = x2h @ E
        r = (x2h * Ex1).sum(1)
        den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
        return r / np.sqrt(np.maximum(den, 1e-300))

    sol = least_squares(residuals, np.zeros(5), method="lm", x_scale=1.0)
    Rn, tn = unpack(sol.x)
    return _orthonormalize(Rn), tn


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out
