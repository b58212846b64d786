"""Hot numeric kernels.

Every kernel exists twice: a loop-based version compiled with numba
(``*_nb``) and a vectorised numpy version (``*_np``). The undecorated name
dispatches on :data:`icdc._accel.USE_NUMBA` at call time. Both versions
implement the same arithmetic; results agree to rounding, not bitwise.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

T_MIN = 1e-9
EDGE_TOL = 1e-9
# slack for reprojected pixels that leave the image by rounding only
BOUNDS = 1e-6

# per-candidate status codes of the icdc kernel
OK = 0
INVALID_DEPTH = 1
BEHIND_J = 2
OUT_OF_BOUNDS_J = 3
NO_DEPTH_J = 4
BEHIND_I = 5

STATUS_NAMES = {
    OK: "ok",
    INVALID_DEPTH: "invalid_depth",
    BEHIND_J: "behind_j",
    OUT_OF_BOUNDS_J: "out_of_bounds_j",
    NO_DEPTH_J: "no_depth_j",
    BEHIND_I: "behind_i",
}


def _dispatch(nb, np_):
    def run(*args):
        return (nb if _accel.USE_NUMBA else np_)(*args)

    run.__name__ = np_.__name__.replace("_np", "")
    run.__doc__ = np_.__doc__
    return run


# -- ray casting -----------------------------------------------------------
#
# planes: (P, 14) rows of centre(3), normal(3), u-axis(3), v-axis(3),
#         half-extent-u, half-extent-v
# boxes:  (B, 6) rows of min(3), max(3)


@njit
def cast_rays_nb(origins, dirs, planes, boxes):
    n = origins.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best = np.inf
        for k in range(planes.shape[0]):
            pl = planes[k]
            denom = pl[3] * dx + pl[4] * dy + pl[5] * dz
            if denom == 0.0:
                continue
            t = (pl[3] * (pl[0] - ox) + pl[4] * (pl[1] - oy) + pl[5] * (pl[2] - oz)) / denom
            if not (t > T_MIN and t < best):
                continue
            hx = ox + t * dx - pl[0]
            hy = oy + t * dy - pl[1]
            hz = oz + t * dz - pl[2]
            a = hx * pl[6] + hy * pl[7] + hz * pl[8]
            b = hx * pl[9] + hy * pl[10] + hz * pl[11]
            if abs(a) <= pl[12] + EDGE_TOL and abs(b) <= pl[13] + EDGE_TOL:
                best = t
        for k in range(boxes.shape[0]):
            bx = boxes[k]
            tnear = -np.inf
            tfar = np.inf
            hit = True
            for ax in range(3):
                o = origins[i, ax]
                d = dirs[i, ax]
                lo = bx[ax]
                hi = bx[ax + 3]
                if d == 0.0:
                    if o < lo or o > hi:
                        hit = False
                        break
                    continue
                t1 = (lo - o) / d
                t2 = (hi - o) / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tnear:
                    tnear = t1
                if t2 < tfar:
                    tfar = t2
            if not hit or tnear > tfar or tfar <= T_MIN:
                continue
            t = tnear if tnear > T_MIN else tfar
            if t < best:
                best = t
        out[i] = best
    return out


def cast_rays_np(origins, dirs, planes, boxes):
    """Nearest hit parameter ``t > 0`` per ray (``inf`` on a miss)."""
    best = np.full(origins.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for pl in planes:
            c, nrm, u, v = pl[0:3], pl[3:6], pl[6:9], pl[9:12]
            denom = dirs @ nrm
            t = ((c - origins) @ nrm) / denom
            h = origins + t[:, None] * dirs - c
            inside = (np.abs(h @ u) <= pl[12] + EDGE_TOL) & (np.abs(h @ v) <= pl[13] + EDGE_TOL)
            take = (denom != 0.0) & (t > T_MIN) & (t < best) & inside
            best = np.where(take, t, best)
        for bx in boxes:
            lo, hi = bx[:3], bx[3:]
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
            zero = dirs == 0.0
            outside = zero & ((origins < lo) | (origins > hi))
            tmin = np.where(zero, -np.inf, np.minimum(t1, t2))
            tmax = np.where(zero, np.inf, np.maximum(t1, t2))
            tnear = tmin.max(axis=1)
            tfar = tmax.min(axis=1)
            hit = ~outside.any(axis=1) & (tnear <= tfar) & (tfar > T_MIN)
            t = np.where(tnear > T_MIN, tnear, tfar)
            best = np.where(hit & (t < best), t, best)
    return best


cast_rays = _dispatch(cast_rays_nb, cast_rays_np)


# -- depth sampling and icdc -----------------------------------------------


@njit
def sample_depth_nb(values, valid, x, y):
    h, w = values.shape
    x0 = min(int(math.floor(x)), max(w - 2, 0))
    y0 = min(int(math.floor(y)), max(h - 2, 0))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    v00 = valid[y0, x0]
    v10 = valid[y0, x1]
    v01 = valid[y1, x0]
    v11 = valid[y1, x1]
    if v00 and v10 and v01 and v11:
        # inverse depth is affine in the image for any plane
        top = (1.0 - ax) / values[y0, x0] + ax / values[y0, x1]
        bot = (1.0 - ax) / values[y1, x0] + ax / values[y1, x1]
        return 1.0 / (top * (1.0 - ay) + bot * ay)
    best = np.inf
    out = np.nan
    if v00:
        d = ax * ax + ay * ay
        if d < best:
            best, out = d, values[y0, x0]
    if v10:
        d = (1.0 - ax) ** 2 + ay * ay
        if d < best:
            best, out = d, values[y0, x1]
    if v01:
        d = ax * ax + (1.0 - ay) ** 2
        if d < best:
            best, out = d, values[y1, x0]
    if v11:
        d = (1.0 - ax) ** 2 + (1.0 - ay) ** 2
        if d < best:
            best, out = d, values[y1, x1]
    return out


def sample_depth_np(values, valid, x, y):
    """Depth at sub-pixel ``(x, y)``: bilinear in inverse depth when all four
    neighbours are valid, else the nearest valid neighbour, else NaN. Coordinates must lie
    inside ``[0, w-1] x [0, h-1]``."""
    h, w = values.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    corners = [(y0, x0, ax * ax + ay * ay), (y0, x1, (1 - ax) ** 2 + ay * ay),
               (y1, x0, ax * ax + (1 - ay) ** 2), (y1, x1, (1 - ax) ** 2 + (1 - ay) ** 2)]
    ok = [valid[r, c] for r, c, _ in corners]
    vals = [values[r, c] for r, c, _ in corners]
    with np.errstate(divide="ignore", invalid="ignore"):
        top = (1.0 - ax) / vals[0] + ax / vals[1]
        bot = (1.0 - ax) / vals[2] + ax / vals[3]
        bilinear = 1.0 / (top * (1.0 - ay) + bot * ay)
    nearest = np.full(x.shape, np.nan)
    best = np.full(x.shape, np.inf)
    for (_, _, d), o, v in zip(corners, ok, vals):
        take = o & (d < best)
        best = np.where(take, d, best)
        nearest = np.where(take, v, nearest)
    return np.where(ok[0] & ok[1] & ok[2] & ok[3], bilinear, nearest)


sample_depth = _dispatch(sample_depth_nb, sample_depth_np)


@njit
def icdc_pixels_nb(pix, depth_i, intr_i, intr_j, R, t, values_j, valid_j):
    n = pix.shape[0]
    q = np.full((n, 2), np.nan)
    z_j = np.full(n, np.nan)
    loop = np.full(n, np.nan)
    ddiff = np.full(n, np.nan)
    status = np.zeros(n, dtype=np.int8)
    fxi, fyi, cxi, cyi = intr_i[0], intr_i[1], intr_i[2], intr_i[3]
    fxj, fyj, cxj, cyj, wj, hj = intr_j[0], intr_j[1], intr_j[2], intr_j[3], intr_j[4], intr_j[5]
    for k in range(n):
        d = depth_i[k]
        if not (d > 0.0) or not np.isfinite(d):
            status[k] = INVALID_DEPTH
            continue
        u, v = pix[k, 0], pix[k, 1]
        a = (u - cxi) / fxi
        b = (v - cyi) / fyi
        # transform the unit-depth ray and t / d so that an identity motion is exact
        tx, ty, tz = t[0] / d, t[1] / d, t[2] / d
        X = R[0, 0] * a + R[0, 1] * b + R[0, 2] + tx
        Y = R[1, 0] * a + R[1, 1] * b + R[1, 2] + ty
        Z = R[2, 0] * a + R[2, 1] * b + R[2, 2] + tz
        if not (Z > 0.0):
            status[k] = BEHIND_J
            continue
        aj = X / Z
        bj = Y / Z
        qx = u + ((fxj * aj + cxj) - (fxi * a + cxi))
        qy = v + ((fyj * bj + cyj) - (fyi * b + cyi))
        if not (qx >= -BOUNDS and qx <= wj - 1 + BOUNDS and qy >= -BOUNDS and qy <= hj - 1 + BOUNDS):
            status[k] = OUT_OF_BOUNDS_J
            continue
        zq = d * Z
        q[k, 0] = qx
        q[k, 1] = qy
        z_j[k] = zq
        dq = sample_depth_nb(values_j, valid_j, min(max(qx, 0.0), wj - 1), min(max(qy, 0.0), hj - 1))
        if not (dq > 0.0):
            status[k] = NO_DEPTH_J
            continue
        ddiff[k] = abs(zq - dq)
        # back into I with the query's own depth: X_I = R^T (X_J - t)
        xj = aj - t[0] / dq
        yj = bj - t[1] / dq
        zj = 1.0 - t[2] / dq
        Xb = R[0, 0] * xj + R[1, 0] * yj + R[2, 0] * zj
        Yb = R[0, 1] * xj + R[1, 1] * yj + R[2, 1] * zj
        Zb = R[0, 2] * xj + R[1, 2] * yj + R[2, 2] * zj
        if not (Zb > 0.0):
            status[k] = BEHIND_I
            continue
        du = fxi * (Xb / Zb - a)
        dv = fyi * (Yb / Zb - b)
        loop[k] = math.sqrt(du * du + dv * dv)
    return q, z_j, loop, ddiff, status


def icdc_pixels_np(pix, depth_i, intr_i, intr_j, R, t, values_j, valid_j):
    """Forward reprojection I->J, depth lookup in J and return trip J->I.

    Returns ``(q, z_j, loop, depth_diff, status)`` per candidate pixel.
    Entries past the failing stage are NaN and ``status`` names the stage.
    """
    n = pix.shape[0]
    fxi, fyi, cxi, cyi = intr_i[:4]
    fxj, fyj, cxj, cyj, wj, hj = intr_j[:6]
    status = np.zeros(n, dtype=np.int8)
    q = np.full((n, 2), np.nan)
    z_j = np.full(n, np.nan)
    loop = np.full(n, np.nan)
    ddiff = np.full(n, np.nan)

    good = np.isfinite(depth_i) & (depth_i > 0)
    status[~good] = INVALID_DEPTH
    d = np.where(good, depth_i, 1.0)
    a = (pix[:, 0] - cxi) / fxi
    b = (pix[:, 1] - cyi) / fyi
    ray = np.stack([a, b, np.ones(n)], axis=1)
    Xj = ray @ R.T + t / d[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        aj = Xj[:, 0] / Xj[:, 2]
        bj = Xj[:, 1] / Xj[:, 2]
        qx = pix[:, 0] + ((fxj * aj + cxj) - (fxi * a + cxi))
        qy = pix[:, 1] + ((fyj * bj + cyj) - (fyi * b + cyi))
    behind = good & ~(Xj[:, 2] > 0)
    status[behind] = BEHIND_J
    good &= ~behind
    inb = (qx >= -BOUNDS) & (qx <= wj - 1 + BOUNDS) & (qy >= -BOUNDS) & (qy <= hj - 1 + BOUNDS)
    status[good & ~inb] = OUT_OF_BOUNDS_J
    good &= inb
    zq = d * Xj[:, 2]
    q[good, 0] = qx[good]
    q[good, 1] = qy[good]
    z_j[good] = zq[good]

    idx = np.flatnonzero(good)
    sx = np.clip(qx[idx], 0.0, wj - 1)
    sy = np.clip(qy[idx], 0.0, hj - 1)
    dq = sample_depth_np(values_j, valid_j, sx, sy)
    nod = ~(dq > 0)
    status[idx[nod]] = NO_DEPTH_J
    idx, dq = idx[~nod], dq[~nod]
    ddiff[idx] = np.abs(zq[idx] - dq)

    Xq = np.stack([aj[idx], bj[idx], np.ones(len(idx))], axis=1) - t / dq[:, None]
    Xb = Xq @ R
    back_ok = Xb[:, 2] > 0
    status[idx[~back_ok]] = BEHIND_I
    idx, Xb = idx[back_ok], Xb[back_ok]
    du = fxi * (Xb[:, 0] / Xb[:, 2] - a[idx])
    dv = fyi * (Xb[:, 1] / Xb[:, 2] - b[idx])
    loop[idx] = np.sqrt(du * du + dv * dv)
    return q, z_j, loop, ddiff, status


icdc_pixels = _dispatch(icdc_pixels_nb, icdc_pixels_np)


# -- essential-matrix RANSAC -----------------------------------------------


def _required_iterations(inliers, n, confidence, sample_size, max_iter):
    w = inliers / n
    if w >= 1.0:
        return 1
    p = w**sample_size
    denom = math.log1p(-p)
    # p underflows against 1 for tiny inlier ratios
    if not denom < 0.0:
        return max_iter
    need = math.log1p(-confidence) / denom
    if need >= max_iter:
        return max_iter
    return max(1, int(math.ceil(need)))


_required_iterations_nb = njit(_required_iterations)


@njit
def _hartley(x):
    n = x.shape[0]
    mx = 0.0
    my = 0.0
    for i in range(n):
        mx += x[i, 0]
        my += x[i, 1]
    mx /= n
    my /= n
    s = 0.0
    for i in range(n):
        s += math.sqrt((x[i, 0] - mx) ** 2 + (x[i, 1] - my) ** 2)
    s /= n
    scale = math.sqrt(2.0) / s if s > 0 else 1.0
    T = np.zeros((3, 3))
    T[0, 0] = scale
    T[1, 1] = scale
    T[0, 2] = -scale * mx
    T[1, 2] = -scale * my
    T[2, 2] = 1.0
    return T


@njit
def eight_point_nb(x1, x2):
    n = x1.shape[0]
    T1 = _hartley(x1)
    T2 = _hartley(x2)
    A = np.zeros((max(n, 9), 9))
    for i in range(n):
        a0 = T1[0, 0] * x1[i, 0] + T1[0, 2]
        a1 = T1[1, 1] * x1[i, 1] + T1[1, 2]
        b0 = T2[0, 0] * x2[i, 0] + T2[0, 2]
        b1 = T2[1, 1] * x2[i, 1] + T2[1, 2]
        A[i, 0] = b0 * a0
        A[i, 1] = b0 * a1
        A[i, 2] = b0
        A[i, 3] = b1 * a0
        A[i, 4] = b1 * a1
        A[i, 5] = b1
        A[i, 6] = a0
        A[i, 7] = a1
        A[i, 8] = 1.0
    _, _, vt = np.linalg.svd(A)
    F = np.ascontiguousarray(vt[8]).reshape(3, 3)
    E = T2.T @ F @ T1
    U, _, Vt = np.linalg.svd(E)
    S = np.zeros((3, 3))
    S[0, 0] = 1.0
    S[1, 1] = 1.0
    return U @ S @ Vt


@njit
def _sampson_sq_nb(E, x1, x2, out):
    for i in range(x1.shape[0]):
        a0, a1 = x1[i, 0], x1[i, 1]
        b0, b1 = x2[i, 0], x2[i, 1]
        e0 = E[0, 0] * a0 + E[0, 1] * a1 + E[0, 2]
        e1 = E[1, 0] * a0 + E[1, 1] * a1 + E[1, 2]
        e2 = E[2, 0] * a0 + E[2, 1] * a1 + E[2, 2]
        f0 = E[0, 0] * b0 + E[1, 0] * b1 + E[2, 0]
        f1 = E[0, 1] * b0 + E[1, 1] * b1 + E[2, 1]
        r = b0 * e0 + b1 * e1 + e2
        den = e0 * e0 + e1 * e1 + f0 * f0 + f1 * f1
        out[i] = r * r / den if den > 0 else np.inf


@njit
def ransac_essential_nb(x1, x2, samples, thresh, confidence):
    n = x1.shape[0]
    max_iter = samples.shape[0]
    thresh2 = thresh * thresh
    best_E = np.zeros((3, 3))
    best = -1
    needed = max_iter
    d2 = np.empty(n)
    s1 = np.empty((8, 2))
    s2 = np.empty((8, 2))
    it = 0
    while it < needed:
        for j in range(8):
            s1[j] = x1[samples[it, j]]
            s2[j] = x2[samples[it, j]]
        E = eight_point_nb(s1, s2)
        _sampson_sq_nb(E, x1, x2, d2)
        count = 0
        for i in range(n):
            if d2[i] <= thresh2:
                count += 1
        if count > best:
            best = count
            best_E[:, :] = E
            needed = _required_iterations_nb(best, n, confidence, 8, max_iter)
        it += 1
    return best_E, best, it


def eight_point_np(x1, x2):
    """Normalised 8-point essential fit on batches.

    ``x1``, ``x2`` are ``(..., N, 2)`` normalised image coordinates; returns
    ``(..., 3, 3)`` with singular values projected to ``(1, 1, 0)``.
    """
    def hartley(x):
        m = x.mean(axis=-2, keepdims=True)
        s = np.sqrt(((x - m) ** 2).sum(-1)).mean(-1)
        scale = np.where(s > 0, np.sqrt(2.0) / np.where(s > 0, s, 1.0), 1.0)
        T = np.zeros(x.shape[:-2] + (3, 3))
        T[..., 0, 0] = scale
        T[..., 1, 1] = scale
        T[..., 0, 2] = -scale * m[..., 0, 0]
        T[..., 1, 2] = -scale * m[..., 0, 1]
        T[..., 2, 2] = 1.0
        return T, (x - m) * scale[..., None, None]

    T1, a = hartley(x1)
    T2, b = hartley(x2)
    one = np.ones(a.shape[:-1])
    A = np.stack(
        [b[..., 0] * a[..., 0], b[..., 0] * a[..., 1], b[..., 0],
         b[..., 1] * a[..., 0], b[..., 1] * a[..., 1], b[..., 1],
         a[..., 0], a[..., 1], one], axis=-1)
    if A.shape[-2] < 9:
        pad = np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))
        A = np.concatenate([A, pad], axis=-2)
    _, _, vt = np.linalg.svd(A)
    F = vt[..., 8, :].reshape(A.shape[:-2] + (3, 3))
    E = np.swapaxes(T2, -1, -2) @ F @ T1
    U, _, Vt = np.linalg.svd(E)
    return U @ (np.array([1.0, 1.0, 0.0])[:, None] * Vt)


def sampson_sq_np(E, x1, x2):
    """Squared Sampson distance for ``E`` of shape ``(..., 3, 3)`` over all points."""
    x1h = np.concatenate([x1, np.ones((x1.shape[0], 1))], axis=1)
    x2h = np.concatenate([x2, np.ones((x2.shape[0], 1))], axis=1)
    Ex1 = x1h @ np.swapaxes(E, -1, -2)
    Etx2 = x2h @ E
    r = (x2h * Ex1).sum(-1)
    den = Ex1[..., 0] ** 2 + Ex1[..., 1] ** 2 + Etx2[..., 0] ** 2 + Etx2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, r * r / den, np.inf)


def ransac_essential_np(x1, x2, samples, thresh, confidence, chunk=64):
    """RANSAC over precomputed minimal samples with adaptive early exit.

    Hypotheses are evaluated in vectorised chunks; the stopping rule is
    replayed sequentially so the outcome matches a one-at-a-time loop.
    Returns ``(E, inlier_count, iterations)``.
    """
    n = x1.shape[0]
    max_iter = samples.shape[0]
    thresh2 = thresh * thresh
    best, best_E, needed, it = -1, np.zeros((3, 3)), max_iter, 0
    while it < needed:
        stop = min(it + chunk, needed)
        idx = samples[it:stop]
        Es = eight_point_np(x1[idx], x2[idx])
        counts = (sampson_sq_np(Es, x1, x2) <= thresh2).sum(-1)
        for k, c in enumerate(counts):
            if c > best:
                best, best_E = int(c), Es[k]
                needed = _required_iterations(best, n, confidence, 8, max_iter)
            it += 1
            if it >= needed:
                break
    return best_E, best, it


ransac_essential = _dispatch(ransac_essential_nb, ransac_essential_np)
