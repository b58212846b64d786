"""Relative-pose benchmark: keyframe pairs, pose estimation runs and error statistics."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyTrajectory, NoConsensus, TooFewCorrespondences, TranslationUndefined
from .essential import RansacConfig, estimate_relative_pose
from .geometry import pose_error, relative, rotation_angle_deg
from .io import header_lines

AUC_THRESHOLDS = (5.0, 10.0, 20.0)
ABS_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))

EVAL_PARAMS = {"ref_spacing": 10.0, "max_distance": 8.0, "max_angle": 45.0, "query_spacing": 2.0}
TRAIN_PARAMS = {"ref_spacing": 6.0, "max_distance": 6.0, "per_pass": 2}

RESULT_COLUMNS = ("ref_traj", "query_traj", "ref_frame", "query_frame",
                  "rot_err_deg", "trans_err_deg", "pose_err_deg", "status")


# -- keyframing ------------------------------------------------------------


@dataclass(frozen=True)
class KeyframePair:
    ref: str
    query: str
    distance: float
    angle_deg: float


@dataclass
class KeyframePairs:
    pairs: list
    params: dict = field(default_factory=dict)
    refs: tuple = ()

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def references(self):
        """Reference frames chosen, whether or not any query matched them."""
        return list(self.refs)


def _frames_of(mtm, label):
    ids = mtm.trajectory(label)
    if not ids:
        raise EmptyTrajectory(f"trajectory {label!r} has no frames")
    return ids


def select_references(positions, spacing):
    """Greedy walk: take a frame once it is ``spacing`` metres from the last one taken."""
    if len(positions) == 0:
        return []
    keep = [0]
    for k in range(1, len(positions)):
        if np.linalg.norm(positions[k] - positions[keep[-1]]) >= spacing:
            keep.append(k)
    return keep


def _relative_angle(mtm, a, b):
    Ra = mtm.frames[a].pose.rotation
    Rb = mtm.frames[b].pose.rotation
    return rotation_angle_deg(Rb @ Ra.T)


def _sorted(pairs):
    return sorted(pairs, key=lambda p: (p.ref, p.query))


def keyframe_eval(mtm, ref_label, query_label, ref_spacing=10.0, max_distance=8.0,
                  max_angle=45.0, query_spacing=2.0) -> KeyframePairs:
    """Evaluation pairs between two trajectories of one map.

    References are thinned along ``ref_label``; for each, query frames within
    ``max_distance`` metres and ``max_angle`` degrees of relative rotation are
    kept when at least ``query_spacing`` metres from the previously kept one.
    """
    ref_ids = _frames_of(mtm, ref_label)
    q_ids = _frames_of(mtm, query_label)
    ref_pos = mtm.positions(ref_ids)
    q_pos = mtm.positions(q_ids)
    out = []
    chosen = select_references(ref_pos, ref_spacing)
    for r in chosen:
        rid = ref_ids[r]
        dist = np.linalg.norm(q_pos - ref_pos[r], axis=1)
        last = None
        for k in np.flatnonzero(dist <= max_distance):
            qid = q_ids[k]
            if qid == rid:
                continue
            angle = _relative_angle(mtm, rid, qid)
            if angle > max_angle:
                continue
            if last is not None and np.linalg.norm(q_pos[k] - last) < query_spacing:
                continue
            last = q_pos[k]
            out.append(KeyframePair(rid, qid, float(dist[k]), float(angle)))
    params = dict(EVAL_PARAMS, ref_spacing=ref_spacing, max_distance=max_distance,
                  max_angle=max_angle, query_spacing=query_spacing,
                  ref_traj=ref_label, query_traj=query_label)
    return KeyframePairs(_sorted(out), params, tuple(ref_ids[r] for r in chosen))


def _runs(indices):
    """Split sorted indices into runs of consecutive values."""
    if len(indices) == 0:
        return []
    cuts = np.flatnonzero(np.diff(indices) > 1) + 1
    return np.split(indices, cuts)


def _spread(run, k):
    if len(run) <= k:
        return list(run)
    if k == 1:
        return [run[0]]
    picks = np.round(np.linspace(0, len(run) - 1, k)).astype(int)
    return [run[i] for i in picks]


def keyframe_train(mtm, labels=None, ref_spacing=6.0, max_distance=6.0, per_pass=2) -> KeyframePairs:
    """Training pairs over every ordered pair of trajectories, same trajectory included.

    Each contiguous stretch of a query trajectory passing within
    ``max_distance`` of a reference is a separate pass and contributes up to
    ``per_pass`` frames spread over the stretch, so repeated loops multiply
    the pair count. A stretch cut off by the first or last frame counts as
    half a pass and keeps its inner end only (``per_pass // 2`` frames).
    """
    labels = mtm.labels() if labels is None else list(labels)
    if not labels:
        raise EmptyTrajectory("no trajectories given")
    ids = {lab: _frames_of(mtm, lab) for lab in labels}
    pos = {lab: mtm.positions(ids[lab]) for lab in labels}
    out, refs = [], []
    for ref_label in labels:
        ref_ids = ids[ref_label]
        for r in select_references(pos[ref_label], ref_spacing):
            rid = ref_ids[r]
            refs.append(rid)
            for q_label in labels:
                dist = np.linalg.norm(pos[q_label] - pos[ref_label][r], axis=1)
                last = len(dist) - 1
                for run in _runs(np.flatnonzero(dist <= max_distance)):
                    # a run cut by one end of the trajectory is half a pass
                    head, tail = run[0] == 0, run[-1] == last
                    run = [k for k in run if ids[q_label][k] != rid]
                    if head != tail:
                        picks = _spread(run[::-1] if head else run, max(1, per_pass // 2))
                    else:
                        picks = _spread(run, per_pass)
                    for k in picks:
                        qid = ids[q_label][k]
                        out.append(KeyframePair(rid, qid, float(dist[k]),
                                                float(_relative_angle(mtm, rid, qid))))
    params = dict(TRAIN_PARAMS, ref_spacing=ref_spacing, max_distance=max_distance,
                  per_pass=per_pass, trajectories=labels)
    return KeyframePairs(_sorted(out), params, tuple(refs))


# -- statistics ------------------------------------------------------------


def _clean(errors):
    """Errors as floats, NaN treated as a failed estimate."""
    return [math.inf if math.isnan(e) else float(e) for e in errors]


def median(errors):
    s = sorted(_clean(errors))
    if not s:
        raise ValueError("median of an empty error list")
    m = len(s) // 2
    if len(s) % 2:
        return s[m]
    return (s[m - 1] + s[m]) / 2.0


def auc(errors, threshold):
    """Area under the fraction-correct curve on ``[0, threshold]``, normalised.

    The curve is a step function of the sorted errors, so the integral is
    exact: each error ``e`` adds ``threshold - e`` when below the threshold.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    errs = _clean(errors)
    if not errs:
        raise ValueError("auc of an empty error list")
    area = math.fsum(threshold - e for e in errs if e < threshold)
    return area / (len(errs) * threshold)


def fraction_below(errors, threshold):
    errs = _clean(errors)
    return sum(e <= threshold for e in errs) / len(errs)


def cumulative_curve(errors, max_deg=30.0, step=0.25):
    grid = np.round(np.arange(0.0, max_deg + step / 2, step), 10)
    errs = np.sort(np.asarray(_clean(errors)))
    frac = np.searchsorted(errs, grid, side="right") / len(errs)
    return grid, frac


@dataclass
class PairStats:
    errors: tuple
    median_deg: float
    auc: dict
    failures: int

    @property
    def count(self):
        return len(self.errors)


@dataclass
class PoseErrorSummary:
    pairs: dict
    cross_domain: dict
    thresholds: tuple = AUC_THRESHOLDS

    def as_dict(self):
        def num(x):
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")

        return {
            "pairs": {
                f"{r}->{q}": {
                    "count": st.count,
                    "failures": st.failures,
                    "median_deg": num(st.median_deg),
                    "auc": {f"{t:g}": st.auc[t] for t in self.thresholds},
                }
                for (r, q), st in self.pairs.items()
            },
            "cross_domain_mean_median_deg": {r: num(v) for r, v in self.cross_domain.items()},
        }


def summarize(errors_by_pair, thresholds=AUC_THRESHOLDS) -> PoseErrorSummary:
    """Median, AUC and failure count per (reference, query) trajectory pair.

    The cross-domain figure of a reference trajectory is the mean of its
    medians against every other query trajectory.
    """
    thresholds = tuple(float(t) for t in thresholds)
    pairs = {}
    for key in sorted(errors_by_pair):
        errs = tuple(_clean(errors_by_pair[key]))
        if not errs:
            raise ValueError(f"no errors recorded for pair {key}")
        pairs[key] = PairStats(
            errors=errs,
            median_deg=median(errs),
            auc={t: auc(errs, t) for t in thresholds},
            failures=sum(math.isinf(e) for e in errs),
        )
    cross = {}
    for ref in sorted({r for r, _ in pairs}):
        meds = [st.median_deg for (r, q), st in pairs.items() if r == ref and q != ref]
        if meds:
            cross[ref] = math.fsum(meds) / len(meds) if all(map(math.isfinite, meds)) else math.inf
    return PoseErrorSummary(pairs, cross, thresholds)


# -- absolute pose ---------------------------------------------------------


@dataclass(frozen=True)
class AbsoluteAccuracy:
    fractions: tuple
    thresholds: tuple = ABS_THRESHOLDS
    count: int = 0


def absolute_accuracy(gt, est, thresholds=ABS_THRESHOLDS) -> AbsoluteAccuracy:
    """Share of images within each (metres, degrees) threshold; missing estimates fail."""
    if not gt:
        raise ValueError("no ground-truth poses")
    pos_err = np.full(len(gt), np.inf)
    rot_err = np.full(len(gt), np.inf)
    for k, (fid, g) in enumerate(sorted(gt.items())):
        e = est.get(fid)
        if e is None:
            continue
        pos_err[k] = np.linalg.norm(g.center - e.center)
        rot_err[k] = rotation_angle_deg(e.rotation @ g.rotation.T)
    fracs = tuple(float(np.count_nonzero((pos_err <= d) & (rot_err <= a))) / len(gt)
                  for d, a in thresholds)
    return AbsoluteAccuracy(fracs, tuple(thresholds), len(gt))


# -- running pairs ---------------------------------------------------------


@dataclass(frozen=True)
class PairResult:
    ref_traj: str
    query_traj: str
    ref_frame: str
    query_frame: str
    rot_err_deg: float
    trans_err_deg: float
    pose_err_deg: float
    status: str
    n_corr: int = 0
    n_inliers: int = 0

    def row(self):
        return [self.ref_traj, self.query_traj, self.ref_frame, self.query_frame,
                _fmt_err(self.rot_err_deg), _fmt_err(self.trans_err_deg),
                _fmt_err(self.pose_err_deg), self.status]


def _fmt_err(x):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def pair_seed(ref, query, seed):
    """Stable per-pair seed, independent of scheduling and of Python's hash salt."""
    h = hashlib.sha256(f"{ref}|{query}|{int(seed)}".encode()).digest()
    return int.from_bytes(h[:8], "little")


FAILURES = {
    TooFewCorrespondences: "too_few",
    NoConsensus: "no_consensus",
    TranslationUndefined: "translation_undefined",
}


def evaluate_pair(mtm, pair: KeyframePair, source, config: RansacConfig, seed=0, max_corr=2000):
    """Estimate one relative pose from ``source(ref, query)`` and score it."""
    fr = mtm.frames[pair.ref]
    fq = mtm.frames[pair.query]
    s = pair_seed(pair.ref, pair.query, seed)
    cs = source(pair.ref, pair.query)
    p, q = cs.p, cs.q
    if len(p) > max_corr:
        keep = np.sort(np.random.default_rng(s).choice(len(p), max_corr, replace=False))
        p, q = p[keep], q[keep]
    base = dict(ref_traj=fr.label, query_traj=fq.label, ref_frame=pair.ref, query_frame=pair.query,
                n_corr=len(p))
    try:
        est = estimate_relative_pose(p, q, fr.camera, fq.camera, config.replace(seed=s % (2**63)))
    except tuple(FAILURES) as exc:
        status = next(v for k, v in FAILURES.items() if isinstance(exc, k))
        return PairResult(rot_err_deg=math.inf, trans_err_deg=math.inf, pose_err_deg=math.inf,
                          status=status, **base)
    err = pose_error(relative(fr.pose, fq.pose), est.pose)
    trans = err.translation_deg if err.translation_defined else math.nan
    return PairResult(rot_err_deg=err.rotation_deg, trans_err_deg=trans,
                      pose_err_deg=err.pose_error_deg, status="ok",
                      n_inliers=int(est.inliers.sum()), **base)


def run_relative(mtm, pairs, source, config=None, seed=0, jobs=1, max_corr=2000):
    """Evaluate every keyframe pair; results keep the order of ``pairs``."""
    config = config or RansacConfig()
    pairs = list(pairs)

    def one(pair):
        return evaluate_pair(mtm, pair, source, config, seed, max_corr)

    if jobs <= 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, pairs))


def errors_by_pair(results):
    out = {}
    for r in results:
        out.setdefault((r.ref_traj, r.query_traj), []).append(r.pose_err_deg)
    return out


# -- output files ----------------------------------------------------------


def write_results_csv(path, results, meta=None):
    with open(path, "w", newline="") as fh:
        for line in header_lines(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow(r.row())


def read_results_csv(path):
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rows.append(PairResult(
            rec["ref_traj"], rec["query_traj"], rec["ref_frame"], rec["query_frame"],
            float(rec["rot_err_deg"]), float(rec["trans_err_deg"]), float(rec["pose_err_deg"]),
            rec["status"]))
    return rows


def format_summary(summary: PoseErrorSummary, meta=None) -> str:
    """Summary as JSON; run metadata goes under a ``meta`` key."""
    doc = summary.as_dict()
    if meta:
        doc["meta"] = {k: str(v) for k, v in meta.items()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_curve_csv(path, errors, meta=None, max_deg=30.0, step=0.25):
    grid, frac = cumulative_curve(errors, max_deg, step)
    with open(path, "w") as fh:
        for line in header_lines(meta or {}):
            fh.write(line + "\n")
        fh.write("threshold_deg,fraction\n")
        for t, f in zip(grid, frac):
            fh.write(f"{t:g},{f:.6f}\n")


def curve_filename(ref, query):
    return Path(f"curve_{ref}__{query}.csv")
