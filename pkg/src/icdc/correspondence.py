"""Correspondence generation by depth reprojection with loop and depth
consistency filtering, plus homography and sparse-map alternatives."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import BehindCamera, FormatError, InvalidDepth, OutOfBounds, UnknownFrame
from .geometry import Camera, DepthMap, Homography, Pose, relative
from .io import fmt, header_lines

DEFAULT_ALPHA = 2.0
DEFAULT_BETA = 0.15
CSV_HEADER = "px,py,qx,qy,loop_px,depth_m"


@dataclass(frozen=True)
class ConsistencyThresholds:
    """Loop threshold ``alpha`` in pixels, depth threshold ``beta`` in metres.

    ``math.inf`` disables a test.
    """

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


class CorrespondencePair(NamedTuple):
    p: tuple
    q: tuple
    loop_distance: float
    depth_difference: float
    domain_pair: tuple


@dataclass(eq=False)
class CorrespondenceSet:
    ref_id: str
    query_id: str
    p: np.ndarray
    q: np.ndarray
    loop: np.ndarray
    depth_diff: np.ndarray
    thresholds: ConsistencyThresholds | None = None
    candidates: int = 0
    survived_loop: int = 0
    survived_depth: int = 0
    domain_pair: tuple = ("", "")
    source: str = "icdc"

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 2)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1, 2)
        self.loop = np.asarray(self.loop, dtype=np.float64).reshape(-1)
        self.depth_diff = np.asarray(self.depth_diff, dtype=np.float64).reshape(-1)
        n = len(self.p)
        if not (len(self.q) == len(self.loop) == len(self.depth_diff) == n):
            raise ValueError("correspondence arrays differ in length")

    def __len__(self):
        return len(self.p)

    @property
    def counts(self):
        return (self.candidates, self.survived_loop, self.survived_depth)

    def pairs(self):
        for p, q, lp, dd in zip(self.p, self.q, self.loop, self.depth_diff):
            yield CorrespondencePair(tuple(p), tuple(q), float(lp), float(dd), self.domain_pair)

    def pixel_keys(self):
        """Set of integer ``(x, y)`` reference pixels, for subset checks."""
        return set(map(tuple, np.rint(self.p).astype(np.int64).tolist()))

    def metadata(self):
        th = self.thresholds
        return {
            "ref_id": self.ref_id,
            "query_id": self.query_id,
            "source": self.source,
            "domain_pair": ",".join(self.domain_pair),
            "alpha": fmt(th.alpha) if th else "nan",
            "beta": fmt(th.beta) if th else "nan",
            "candidates": self.candidates,
            "survived_loop": self.survived_loop,
            "survived_depth": self.survived_depth,
        }


# -- single-pixel operations -----------------------------------------------


def _depth_at(d: DepthMap, p):
    u, v = int(round(p[0])), int(round(p[1]))
    if not (0 <= u < d.width and 0 <= v < d.height) or not d.valid[v, u]:
        raise InvalidDepth(f"no valid depth at pixel {tuple(p)}")
    return float(d.values[v, u])


def reproject(p, d_i: DepthMap, cam_i: Camera, cam_j: Camera, T_ji: Pose):
    """Move reference pixel ``p`` into J using its depth in I.

    Returns ``(q, z_in_j)``.
    """
    p = np.asarray(p, dtype=np.float64)
    depth = _depth_at(d_i, p)
    X = T_ji.apply(cam_i.rays(p) * depth)
    if not X[2] > 0:
        raise BehindCamera(f"pixel {tuple(p)} lands behind camera J")
    q = cam_j.project_points(X)
    if not cam_j.in_bounds(q, kernels.BOUNDS):
        raise OutOfBounds(f"pixel {tuple(p)} leaves image J at {tuple(q)}")
    return q, float(X[2])


def _run_one(p, d_i, d_j, cam_i, cam_j, T_ji):
    p = np.asarray(p, dtype=np.float64).reshape(1, 2)
    depth = np.array([_depth_at(d_i, p[0])])
    q, z, loop, dd, status = kernels.icdc_pixels(
        p, depth, _intr(cam_i), _intr(cam_j), T_ji.rotation, T_ji.translation, d_j.values, d_j.valid
    )
    s = status[0]
    if s == kernels.BEHIND_J:
        raise BehindCamera("point lands behind camera J")
    if s == kernels.OUT_OF_BOUNDS_J:
        raise OutOfBounds("point leaves image J")
    if s == kernels.NO_DEPTH_J:
        raise InvalidDepth("no valid query depth around q")
    if s == kernels.BEHIND_I:
        raise BehindCamera("return trip lands behind camera I")
    return float(loop[0]), float(dd[0])


def loop_consistency(p, d_i, d_j, cam_i, cam_j, T_ji) -> float:
    """Pixel distance between ``p`` and its I->J->I round trip."""
    return _run_one(p, d_i, d_j, cam_i, cam_j, T_ji)[0]


def depth_consistency(p, d_i, d_j, cam_i, cam_j, T_ji) -> float:
    """``|z_in_J - d_J(q)|`` with the query depth sampled at sub-pixel ``q``."""
    return _run_one(p, d_i, d_j, cam_i, cam_j, T_ji)[1]


# -- dense icdc ------------------------------------------------------------


def _intr(cam: Camera):
    return np.array(cam.as_tuple(), dtype=np.float64)


@dataclass(eq=False)
class CandidateField:
    """Per-candidate diagnostics before thresholding."""

    p: np.ndarray
    q: np.ndarray
    z_j: np.ndarray
    loop: np.ndarray
    depth_diff: np.ndarray
    status: np.ndarray

    @property
    def reachable(self):
        return self.status == kernels.OK


def icdc_candidates(d_i, d_j, cam_i, cam_j, T_ji, stride=1, jobs=1) -> CandidateField:
    """Run the reprojection and both consistency measurements on every
    valid pixel of the stride grid of I."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if not (d_i.matches(cam_i) and d_j.matches(cam_j)):
        raise ValueError("depth map size does not match its camera")
    grid = cam_i.pixel_grid(stride)
    valid = d_i.valid[grid[:, 1], grid[:, 0]]
    pix = np.ascontiguousarray(grid[valid], dtype=np.float64)
    depth = np.ascontiguousarray(d_i.values[grid[valid, 1], grid[valid, 0]])
    args = (_intr(cam_i), _intr(cam_j), np.ascontiguousarray(T_ji.rotation),
            np.ascontiguousarray(T_ji.translation), d_j.values, d_j.valid)
    if jobs <= 1 or len(pix) < 2 * jobs:
        out = kernels.icdc_pixels(pix, depth, *args)
    else:
        bounds = np.linspace(0, len(pix), jobs + 1).astype(int)
        chunks = [(pix[a:b], depth[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(lambda c: kernels.icdc_pixels(c[0], c[1], *args), chunks))
        out = tuple(np.concatenate(x) for x in zip(*parts))
    q, z_j, loop, dd, status = out
    return CandidateField(pix, q, z_j, loop, dd, status)


def filter_candidates(field_: CandidateField, thresholds: ConsistencyThresholds, *,
                      ref_id="I", query_id="J", **meta) -> CorrespondenceSet:
    ok = field_.reachable
    with np.errstate(invalid="ignore"):
        loop_ok = ok & (field_.loop <= thresholds.alpha)
        keep = loop_ok & (field_.depth_diff <= thresholds.beta)
    return CorrespondenceSet(
        p=field_.p[keep],
        q=field_.q[keep],
        loop=field_.loop[keep],
        depth_diff=field_.depth_diff[keep],
        thresholds=thresholds,
        candidates=len(field_.p),
        survived_loop=int(loop_ok.sum()),
        survived_depth=int(keep.sum()),
        ref_id=ref_id,
        query_id=query_id,
        **meta,
    )


def icdc(d_i: DepthMap, d_j: DepthMap, cam_i: Camera, cam_j: Camera, T_ji: Pose,
         thresholds: ConsistencyThresholds | None = None, stride: int = 1, *,
         ref_id="I", query_id="J", domain_pair=("", ""), jobs=1) -> CorrespondenceSet:
    """Depth-reprojection correspondences between reference I and query J.

    Every valid pixel on the stride grid of I is moved into J with its own
    depth. Candidates are dropped when reprojection fails, when the
    I->J->I loop distance exceeds ``alpha`` pixels, or when the reprojected
    depth disagrees with J's depth at the landing point by more than
    ``beta`` metres. Output is ordered by ``(p.y, p.x)``.
    """
    thresholds = thresholds or ConsistencyThresholds()
    cand = icdc_candidates(d_i, d_j, cam_i, cam_j, T_ji, stride, jobs)
    return filter_candidates(cand, thresholds, ref_id=ref_id, query_id=query_id,
                             domain_pair=tuple(domain_pair), source="icdc")


def homography_correspondences(cam_i: Camera, H: Homography, stride: int = 1, *,
                               ref_id="I", query_id="J") -> CorrespondenceSet:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = cam_i.pixel_grid(stride).astype(np.float64)
    q, w = H.map_points(grid)
    keep = (np.abs(w) > 1e-12) & np.all(np.isfinite(q), axis=1)
    keep &= cam_i.in_bounds(np.where(keep[:, None], q, -1.0))
    n = int(keep.sum())
    return CorrespondenceSet(
        ref_id, query_id, grid[keep], q[keep], np.zeros(n), np.zeros(n),
        thresholds=None, candidates=len(grid), survived_loop=n, survived_depth=n,
        source="homography",
    )


def sparse_map_correspondences(mtm, frame_i, frame_j) -> CorrespondenceSet:
    """Reproject keypoints of ``frame_i`` with their map depth into ``frame_j``.

    No loop or depth test is possible without dense depth in J, so both
    diagnostics are NaN.
    """
    for f in (frame_i, frame_j):
        if f not in mtm.frames:
            raise UnknownFrame(f"unknown frame {f!r}")
    fi, fj = mtm.frames[frame_i], mtm.frames[frame_j]
    xy, depth = mtm.keypoint_depths(frame_i)
    has = np.isfinite(depth) & (depth > 0)
    xy, depth = xy[has], depth[has]
    T = relative(fi.pose, fj.pose)
    X = T.apply(fi.camera.rays(xy) * depth[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = fj.camera.project_points(X)
    keep = (X[:, 2] > 0) & fj.camera.in_bounds(q, kernels.BOUNDS)
    order = np.lexsort((xy[keep, 0], xy[keep, 1]))
    n = int(keep.sum())
    nan = np.full(n, np.nan)
    return CorrespondenceSet(
        frame_i, frame_j, xy[keep][order], q[keep][order], nan, nan.copy(),
        thresholds=None, candidates=len(xy), survived_loop=n, survived_depth=n,
        domain_pair=(fi.label, fj.label), source="sparse-map",
    )


# -- serialisation ---------------------------------------------------------


def _meta_path(path):
    return Path(str(path) + ".meta")


def save_correspondences(path, cs: CorrespondenceSet, meta=None):
    """CSV rows plus a ``<path>.meta`` sidecar of ``key=value`` lines."""
    lines = header_lines(meta)
    lines.append(CSV_HEADER)
    for p, q, lp, dd in zip(cs.p, cs.q, cs.loop, cs.depth_diff):
        lines.append(",".join(fmt(v) for v in (p[0], p[1], q[0], q[1], lp, dd)))
    Path(path).write_text("\n".join(lines) + "\n")
    side = header_lines(meta) + [f"{k}={v}" for k, v in cs.metadata().items()]
    _meta_path(path).write_text("\n".join(side) + "\n")


def _parse_meta(path):
    out = {}
    mp = _meta_path(path)
    if not mp.exists():
        return out
    for line in mp.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_correspondences(path) -> CorrespondenceSet:
    rows = []
    header_seen = False
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != CSV_HEADER:
                    raise FormatError(f"{path}:{n}: expected header {CSV_HEADER!r}")
                header_seen = True
                continue
            f = line.split(",")
            if len(f) != 6:
                raise FormatError(f"{path}:{n}: expected 6 fields")
            rows.append([float(v) for v in f])
    if not header_seen:
        raise FormatError(f"{path}: missing header")
    a = np.array(rows, dtype=np.float64).reshape(-1, 6)
    m = _parse_meta(path)
    th = None
    if m.get("alpha", "nan") != "nan":
        th = ConsistencyThresholds(float(m["alpha"]), float(m["beta"]))
    dp = tuple(m.get("domain_pair", ",").split(",", 1)) if "domain_pair" in m else ("", "")
    return CorrespondenceSet(
        m.get("ref_id", ""), m.get("query_id", ""), a[:, 0:2], a[:, 2:4], a[:, 4], a[:, 5],
        thresholds=th,
        candidates=int(m.get("candidates", len(a))),
        survived_loop=int(m.get("survived_loop", len(a))),
        survived_depth=int(m.get("survived_depth", len(a))),
        domain_pair=dp, source=m.get("source", "icdc"),
    )


BIN_DTYPE = np.dtype("<f4")


def save_correspondences_bin(path, cs: CorrespondenceSet):
    """Compact form: little-endian float32 records ``px py qx qy loop depth``."""
    recs = np.column_stack([cs.p, cs.q, cs.loop, cs.depth_diff]).astype(BIN_DTYPE)
    Path(path).write_bytes(recs.tobytes())


def load_correspondences_bin(path, ref_id="", query_id=""):
    raw = np.frombuffer(Path(path).read_bytes(), dtype=BIN_DTYPE)
    if raw.size % 6:
        raise FormatError(f"{path}: size is not a multiple of the 24-byte record")
    a = raw.reshape(-1, 6).astype(np.float64)
    n = len(a)
    return CorrespondenceSet(ref_id, query_id, a[:, 0:2], a[:, 2:4], a[:, 4], a[:, 5],
                             candidates=n, survived_loop=n, survived_depth=n)
