"""Command-line front end: ``icdc synth | correspond | benchmark | blocks | losses``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmark as bm
from . import correspondence as corr
from . import io as icdc_io
from . import losses as L
from . import mapping, scene
from .errors import (EmptyTrajectory, FormatError, IcdcError, NoConsensus, NumericallyDegenerate,
                     TranslationUndefined, UnknownFrame)
from .essential import RansacConfig
from .geometry import Homography, matrix_to_quat, relative

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def config_error(msg):
    return CliError(msg, EXIT_CONFIG)


def data_error(msg):
    return CliError(msg, EXIT_DATA)


# -- configuration ---------------------------------------------------------

# Options that never change what a command writes.
NOT_HASHED = {"config", "jobs", "out", "func", "command", "mode", "losses_command"}


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise config_error(f"config file not found: {p}")
    text = p.read_text()
    if p.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise config_error(f"{p}: top level must be a mapping")
    return data


def resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("ICDC_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise config_error(f"ICDC_SEED is not an integer: {env!r}") from None
    return 0


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def config_hash(args):
    items = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in NOT_HASHED}
    blob = json.dumps(items, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_meta(args, **extra):
    meta = {"icdc_version": __version__, "command": args.command,
            "config_hash": config_hash(args), "seed": args.seed}
    meta.update(extra)
    return meta


def _check_jobs(args):
    if getattr(args, "jobs", 1) < 1:
        raise config_error("--jobs must be >= 1")


# -- dataset layout --------------------------------------------------------


class Dataset:
    """Files written by ``synth``: manifest, poses, intrinsics, depth and map."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise data_error(f"data directory not found: {self.root}")
        self.manifest = self.root / "manifest.txt"
        for f in (self.manifest, self.root / "poses.txt", self.root / "intrinsics.txt"):
            if not f.is_file():
                raise data_error(f"missing dataset file: {f}")
        self.entries = {}
        for n, f in icdc_io.data_lines(self.manifest):
            if len(f) != 4:
                raise FormatError(f"{self.manifest}:{n}: expected 4 fields")
            self.entries[f[0]] = {"label": f[1], "depth": f[2], "cam_id": f[3]}
        self.poses = icdc_io.load_poses(self.root / "poses.txt")
        self.cameras = icdc_io.load_intrinsics(self.root / "intrinsics.txt")

    def frame(self, fid):
        if fid not in self.entries or fid not in self.poses:
            raise UnknownFrame(f"unknown frame {fid!r}")
        e = self.entries[fid]
        return self.poses[fid], self.cameras[e["cam_id"]], e["label"]

    def depth(self, fid):
        self.frame(fid)
        path = self.root / self.entries[fid]["depth"]
        if not path.is_file():
            raise data_error(f"missing depth file: {path}")
        return icdc_io.load_pfm(path)

    def map(self):
        path = self.root / "map.txt"
        if not path.is_file():
            raise data_error(f"missing map file: {path}")
        return mapping.load_map(path)


# -- synth -----------------------------------------------------------------

TRAJ_KEYS = {"kind", "frames", "step", "lateral", "yaw_deg", "radius", "loops", "length",
             "depth_noise_sigma", "outlier_fraction", "outlier_magnitude_min", "boxes"}


def _trajectory(label, spec):
    unknown = set(spec) - TRAJ_KEYS
    if unknown:
        raise config_error(f"trajectory {label}: unknown keys {sorted(unknown)}")
    kind = spec.get("kind", "straight")
    step = float(spec.get("step", 1.0))
    if not step > 0:
        raise config_error(f"trajectory {label}: step must be > 0")
    if kind == "straight":
        n = int(spec.get("frames", 50))
        if n < 1:
            raise config_error(f"trajectory {label}: frames must be >= 1")
        return scene.straight_trajectory(n, step, (float(spec.get("lateral", 0.0)), 0.0, 0.0),
                                         float(spec.get("yaw_deg", 0.0)))
    if kind == "out-and-back":
        return scene.out_and_back_trajectory(float(spec.get("length", 50.0)), step,
                                             float(spec.get("lateral", 0.0)))
    if kind == "circle":
        return scene.circle_trajectory(float(spec.get("radius", 20.0)), step, int(spec.get("loops", 1)),
                                       (float(spec.get("lateral", 0.0)), 0.0, 0.0))
    raise config_error(f"trajectory {label}: unknown kind {kind!r}")


def _domain(label, spec, base, seed):
    boxes = [scene.Box(b[:3], b[3:]) for b in spec.get("boxes", [])]
    sc = base.with_primitives(*boxes, scene_id=f"{base.scene_id}:{label}") if boxes else base
    pert = scene.DomainPerturbation(
        depth_noise_sigma=float(spec.get("depth_noise_sigma", 0.0)),
        outlier_fraction=float(spec.get("outlier_fraction", 0.0)),
        outlier_magnitude_min=float(spec.get("outlier_magnitude_min", 1.0)),
        seed=seed,
    )
    return sc, pert


def cmd_synth(args):
    if args.scene:
        path = Path(args.scene)
        if not path.is_file():
            raise config_error(f"scene file not found: {path}")
        base = scene.load_scene(path)
    else:
        if args.preset not in scene.PRESETS:
            raise config_error(f"unknown preset {args.preset!r}")
        base = scene.PRESETS[args.preset]()
    cam = scene.corridor_camera(args.width, args.height, args.focal)
    specs = args.trajectories or {"A": {"kind": "straight", "frames": args.frames, "step": args.step}}
    if not isinstance(specs, dict) or not specs:
        raise config_error("trajectories must be a non-empty mapping")
    out = Path(args.out)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    meta = run_meta(args)

    trajs, poses, manifest = {}, {}, []
    for label in specs:
        spec = specs[label] or {}
        trajs[label] = _trajectory(label, spec)
        sc, pert = _domain(label, spec, base, 0)
        for fid, pose in zip(scene.frame_ids(label, len(trajs[label])), trajs[label]):
            d = scene.render_depth(sc, cam, pose)
            if pert.depth_noise_sigma > 0 or pert.outlier_fraction > 0:
                fseed = bm.pair_seed(fid, label, args.seed) % (2**63)
                d = scene.perturb(d, scene.DomainPerturbation(
                    pert.depth_noise_sigma, pert.outlier_fraction, pert.outlier_magnitude_min, fseed))
            rel = f"depth/{fid}.pfm"
            icdc_io.save_pfm(out / rel, d)
            poses[fid] = pose
            manifest.append(f"{fid} {label} {rel} 0")

    scene.save_scene(out / "scene.txt", base, meta=meta)
    icdc_io.save_poses(out / "poses.txt", poses, meta=meta)
    icdc_io.save_intrinsics(out / "intrinsics.txt", {"0": cam}, meta=meta)
    mtm = scene.build_map(base, cam, trajs, density=args.density, max_range=args.max_range, seed=args.seed)
    mapping.save_map(out / "map.txt", mtm, meta=meta)
    head = icdc_io.header_lines(dict(meta, frames=len(manifest)))
    (out / "manifest.txt").write_text("\n".join(head + manifest) + "\n")
    print(f"frames={len(manifest)} trajectories={len(trajs)} out={out}")
    return EXIT_OK


# -- correspond ------------------------------------------------------------


def _thresholds(args):
    try:
        return corr.ConsistencyThresholds(args.alpha, args.beta)
    except ValueError as e:
        raise config_error(str(e)) from None


def _parse_homography(text):
    try:
        vals = [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise config_error(f"homography must be 9 numbers: {text!r}") from None
    if len(vals) != 9:
        raise config_error("homography must be 9 numbers")
    return Homography(np.array(vals).reshape(3, 3))


def make_correspondences(ds, ref, query, method, args, mtm=None):
    pose_i, cam_i, lab_i = ds.frame(ref)
    pose_j, cam_j, lab_j = ds.frame(query)
    if method == "icdc":
        return corr.icdc(ds.depth(ref), ds.depth(query), cam_i, cam_j, relative(pose_i, pose_j),
                         _thresholds(args), args.stride, ref_id=ref, query_id=query,
                         domain_pair=(lab_i, lab_j), jobs=args.jobs)
    if method == "homography":
        if args.homography is None:
            raise config_error("method homography needs --homography")
        return corr.homography_correspondences(cam_i, _parse_homography(args.homography), args.stride,
                                               ref_id=ref, query_id=query)
    if method == "sparse-map":
        return corr.sparse_map_correspondences(mtm if mtm is not None else ds.map(), ref, query)
    raise config_error(f"unknown method {method!r}")


def cmd_correspond(args):
    _check_jobs(args)
    if args.stride < 1:
        raise config_error("--stride must be >= 1")
    _thresholds(args)
    ds = Dataset(args.data)
    cs = make_correspondences(ds, args.ref, args.query, args.method, args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corr.save_correspondences(out, cs, meta=run_meta(args))
    c, sl, sd = cs.counts
    print(f"candidates={c} survived_loop={sl} survived_depth={sd} rows={len(cs)}")
    return EXIT_OK


# -- benchmark -------------------------------------------------------------


def _ransac(args):
    try:
        return RansacConfig(threshold_px=args.ransac_threshold, max_iterations=args.ransac_iterations,
                            confidence=args.ransac_confidence, min_inliers=args.min_inliers)
    except ValueError as e:
        raise config_error(str(e)) from None


def cmd_benchmark_relpose(args):
    _check_jobs(args)
    config = _ransac(args)
    if args.source == "icdc":
        _thresholds(args)
    ds = Dataset(args.data)
    mtm = ds.map()
    for lab in (args.ref_traj, args.query_traj):
        if not mtm.trajectory(lab):
            raise data_error(f"unknown trajectory {lab!r}")
    pairs = bm.keyframe_eval(mtm, args.ref_traj, args.query_traj, args.ref_spacing,
                             args.max_distance, args.max_angle, args.query_spacing)
    if not len(pairs):
        raise data_error("keyframing produced no pairs")

    # pixel-level work inside each pair stays single threaded; pairs run in parallel
    inner = argparse.Namespace(**vars(args))
    inner.jobs = 1
    results = bm.run_relative(mtm, pairs, lambda r, q: make_correspondences(ds, r, q, args.source, inner, mtm),
                              config, args.seed, args.jobs, args.max_corr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = run_meta(args, source=args.source)
    bm.write_results_csv(out / "results.csv", results, meta)
    by_pair = bm.errors_by_pair(results)
    summary = bm.summarize(by_pair)
    (out / "summary.json").write_text(bm.format_summary(summary, meta))
    for (r, q), errs in sorted(by_pair.items()):
        bm.write_curve_csv(out / bm.curve_filename(r, q), errs, meta)
    for (r, q), st in summary.pairs.items():
        aucs = " ".join(f"auc@{t:g}={st.auc[t]:.4f}" for t in summary.thresholds)
        print(f"{r}->{q} pairs={st.count} failures={st.failures} median_deg={st.median_deg:.4f} {aucs}")
    if all(r.status != "ok" for r in results):
        print("error: pose estimation failed on every pair", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_benchmark_abspose(args):
    for p in (args.gt, args.est):
        if not Path(p).is_file():
            raise data_error(f"missing pose file: {p}")
    gt = icdc_io.load_poses(args.gt)
    est = icdc_io.load_poses(args.est)
    if not gt:
        raise data_error(f"{args.gt}: no poses")
    acc = bm.absolute_accuracy(gt, est)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = icdc_io.header_lines(run_meta(args))
    lines.append("max_position_m,max_rotation_deg,fraction")
    for (d, a), f in zip(acc.thresholds, acc.fractions):
        lines.append(f"{d:g},{a:g},{f:.6f}")
    (out / "abspose.csv").write_text("\n".join(lines) + "\n")
    print(" ".join(f"({d:g}m,{a:g}deg)={f:.4f}" for (d, a), f in zip(acc.thresholds, acc.fractions)))
    return EXIT_OK


# -- blocks ----------------------------------------------------------------

BLOCK_COLUMNS = ["block", "members", "first", "last", "buffer", "extent_m", "scale",
                 "qx", "qy", "qz", "qw", "tx", "ty", "tz", "points"]


def cmd_blocks(args):
    ds = Dataset(args.data)
    mtm = ds.map()
    if not mtm.trajectory(args.traj):
        raise data_error(f"unknown trajectory {args.traj!r}")
    blocks = mapping.partition_blocks(mtm, args.traj, args.max_extent, args.buffer_fraction)
    boxes = mapping.BoxHierarchy()
    cols = BLOCK_COLUMNS + [f"contain_s{s}" for s in boxes.scales]
    lines = icdc_io.header_lines(run_meta(args))
    lines.append(",".join(cols))
    for b in blocks:
        b = mapping.align_block(b, mtm, boxes, args.max_point_distance)
        al = b.alignment
        q = matrix_to_quat(al.rotation)
        row = [b.index, len(b.members), b.members[0], b.members[-1], len(b.buffer),
               f"{b.extent:.6f}", f"{al.scale:.9g}", *(f"{v:.9f}" for v in q),
               *(f"{v:.6f}" for v in al.translation), al.n_core_points,
               *(f"{al.containment[s]:.6f}" for s in boxes.scales)]
        lines.append(",".join(str(v) for v in row))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"blocks={len(blocks)} trajectory={args.traj}")
    return EXIT_OK


# -- losses ----------------------------------------------------------------


def _read_columns(path, names):
    p = Path(path)
    if not p.is_file():
        raise data_error(f"missing input file: {p}")
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if ln.strip() and not ln.startswith("#"))]
    if not rows or [c.strip() for c in rows[0]] != list(names):
        raise FormatError(f"{p}: expected header {','.join(names)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{p}: {e}") from None
    return data.reshape(-1, len(names))


def _read_grid(path):
    p = Path(path)
    if not p.is_file():
        raise data_error(f"missing input file: {p}")
    rows = [ln for ln in p.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        return np.array([[float(v) for v in r.split(",")] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{p}: {e}") from None


def _f(x):
    return icdc_io.fmt(x)


def cmd_losses_eval(args):
    out = icdc_io.header_lines(run_meta(args, kind=args.kind))
    try:
        if args.kind == "cosim":
            a = _read_columns(args.input, ["s", "s_prime"])
            res = L.cosim_loss(L.HeatmapSamples(a[:, 0], a[:, 1]))
            out.append(f"value={_f(res.value)}")
            out.append("grad_s,grad_s_prime")
            out += [f"{_f(u)},{_f(v)}" for u, v in zip(res.grad_s, res.grad_s_prime)]
        elif args.kind == "ap-kappa":
            a = _read_columns(args.input, ["ap", "r"])
            res = L.ap_kappa_loss(L.ReliabilityInputs(a[:, 0], a[:, 1], args.kappa))
            out.append(f"mean={_f(res.mean)}")
            out.append("loss,grad_ap,grad_r")
            out += [f"{_f(u)},{_f(v)},{_f(w)}" for u, v, w in zip(res.per_point, res.grad_ap, res.grad_r)]
        elif args.kind == "peakiness":
            out.append(f"value={_f(L.peakiness_loss(_read_grid(args.input), args.patch))}")
        elif args.kind == "ap":
            a = _read_columns(args.input, ["similarity", "label"])
            pos = a[a[:, 1] == 1, 0]
            if len(pos) != 1:
                raise FormatError(f"{args.input}: need exactly one row with label 1")
            out.append(f"value={_f(L.ap_approx(pos[0], a[a[:, 1] == 0, 0], args.bins))}")
        elif args.kind == "global":
            res = L.adapted_global_loss(args.rep, args.rel, L.DomainPair(args.d, args.d_prime))
            out.append(f"value={_f(res.value)}")
            out.append(f"rep_grad_open={int(res.rep_grad_open)}")
            out.append(f"reliability_grad_open={int(res.reliability_grad_open)}")
    except ValueError as e:
        if isinstance(e, IcdcError):
            raise
        raise config_error(str(e)) from None
    text = "\n".join(out) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _common(p, seed=True, jobs=True):
    p.add_argument("--config", help="JSON or YAML file of option defaults; flags win")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="global seed (fallback: $ICDC_SEED, then 0)")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker threads; output does not depend on it")


def _icdc_opts(p):
    p.add_argument("--alpha", type=float, default=corr.DEFAULT_ALPHA, help="loop threshold in pixels")
    p.add_argument("--beta", type=float, default=corr.DEFAULT_BETA, help="depth threshold in metres")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--homography", default=None, help="9 numbers, row major")


def build_parser():
    ap = argparse.ArgumentParser(prog="icdc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"icdc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic multi-trajectory dataset")
    _common(p, jobs=False)
    p.add_argument("--preset", default="corridor", choices=sorted(scene.PRESETS))
    p.add_argument("--scene", default=None, help="scene file (overrides --preset)")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--focal", type=float, default=200.0)
    p.add_argument("--density", type=float, default=1.0, help="map points per square metre")
    p.add_argument("--max-range", type=float, default=30.0, help="map keypoint depth limit (m)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth, trajectories=None)

    p = sub.add_parser("correspond", help="correspondences between two frames")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--method", default="icdc", choices=["icdc", "homography", "sparse-map"])
    _icdc_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("benchmark", help="relative or absolute pose benchmark")
    bsub = p.add_subparsers(dest="mode", required=True)
    r = bsub.add_parser("relpose")
    _common(r)
    r.add_argument("--data", required=True)
    r.add_argument("--ref-traj", required=True)
    r.add_argument("--query-traj", required=True)
    r.add_argument("--source", default="icdc", choices=["icdc", "sparse-map", "homography"])
    _icdc_opts(r)
    r.add_argument("--ref-spacing", type=float, default=bm.EVAL_PARAMS["ref_spacing"])
    r.add_argument("--max-distance", type=float, default=bm.EVAL_PARAMS["max_distance"])
    r.add_argument("--max-angle", type=float, default=bm.EVAL_PARAMS["max_angle"])
    r.add_argument("--query-spacing", type=float, default=bm.EVAL_PARAMS["query_spacing"])
    r.add_argument("--ransac-threshold", type=float, default=1.0)
    r.add_argument("--ransac-iterations", type=int, default=2000)
    r.add_argument("--ransac-confidence", type=float, default=0.999)
    r.add_argument("--min-inliers", type=int, default=15)
    r.add_argument("--max-corr", type=int, default=2000, help="correspondences kept per pair")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_benchmark_relpose)
    a = bsub.add_parser("abspose")
    _common(a, jobs=False)
    a.add_argument("--gt", required=True)
    a.add_argument("--est", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_benchmark_abspose)

    p = sub.add_parser("blocks", help="partition a trajectory into aligned scene blocks")
    _common(p, jobs=False)
    p.add_argument("--data", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--max-extent", type=float, default=mapping.MAX_BLOCK_EXTENT)
    p.add_argument("--buffer-fraction", type=float, default=mapping.BUFFER_FRACTION)
    p.add_argument("--max-point-distance", type=float, default=mapping.MAX_POINT_DISTANCE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blocks)

    p = sub.add_parser("losses", help="evaluate loss kernels")
    lsub = p.add_subparsers(dest="losses_command", required=True)
    e = lsub.add_parser("eval")
    _common(e, jobs=False)
    e.add_argument("--kind", required=True, choices=["cosim", "ap-kappa", "peakiness", "ap", "global"])
    e.add_argument("--input", default=None)
    e.add_argument("--kappa", type=float, default=L.DEFAULT_KAPPA)
    e.add_argument("--patch", type=int, default=4)
    e.add_argument("--bins", type=int, default=L.DEFAULT_BINS)
    e.add_argument("--rep", type=float, default=0.0)
    e.add_argument("--rel", type=float, default=0.0)
    e.add_argument("--d", default="0")
    e.add_argument("--d-prime", default="0")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_losses_eval)
    return ap


def _leaf_parser(ap, argv):
    """The subparser that handles ``argv`` (for applying config defaults)."""
    node = ap
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def parse_args(argv):
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config_path = pre.parse_known_args(argv)[0].config
    if config_path:
        leaf = _leaf_parser(ap, argv)
        command = next((tok for tok in argv if tok in _subcommands(ap)), None)
        cfg = load_config(config_path)
        section = cfg.get(command) if isinstance(cfg.get(command), dict) else None
        flat = {k: v for k, v in cfg.items() if not isinstance(v, dict) or k == "trajectories"}
        if section:
            flat.update(section)
        known = {a.dest for a in leaf._actions} | {"trajectories"}
        defaults = {}
        for k, v in flat.items():
            dest = k.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise config_error(f"{config_path}: unknown option {k!r} for {command}")
            defaults[dest] = v
        leaf.set_defaults(**defaults)
        # required options may come from the config file
        for act in leaf._actions:
            if act.required and act.dest in defaults:
                act.required = False
    args = ap.parse_args(argv)
    args.seed = resolve_seed(args)
    return args


def _subcommands(ap):
    actions = [a for a in ap._actions if isinstance(a, argparse._SubParsersAction)]
    return actions[0].choices if actions else {}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (UnknownFrame, EmptyTrajectory, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NoConsensus, TranslationUndefined, NumericallyDegenerate) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except IcdcError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
