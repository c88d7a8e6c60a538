"""Command-line entry point.

Subcommands compose through files: ``synth`` writes proposals and target
maps that ``refine`` consumes, and ``refine`` writes KITTI labels that
``evaluate`` and ``bins`` read. Exit status is 0 on success, 1 for usage
errors and 2 for bad input data.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import container
from .box_geom import box_from_label, label_from_box
from .confidence_maps import DEFAULT_SIGMA, DEFAULT_TEMPERATURE, PartConfidenceMaps
from .esa_synth import NoiseSpec, make_rng, make_training_pair
from .evaluation import (
    ATTRIBUTES, LEVELS, DetectionFrame, bin_analysis, compute_ap, difficulty_filters,
)
from .kitti_io import (
    CameraRig, KittiFormatError, LabelRecord, parse_calib, parse_labels, read_point_cloud,
    serialize_calib, serialize_labels, write_point_cloud,
)
from .oracle_backend import OracleNoise, SceneSpec, bbox2d_of, render_scene
from .pipeline import oracle_refine, refine_with_maps
from .voxel_grid import GridSpec, voxel_budget_snvc, voxel_budget_uniform

log = logging.getLogger("vernier")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (KittiFormatError, container.ContainerError, FileNotFoundError, ValueError)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- small helpers --------------------------------------------------------

def write_atomic(path, data):
    """Write ``data`` (str or bytes) so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def frame_key(name):
    """Stable integer child-stream key for a frame name."""
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_labels(path):
    path = Path(path)
    try:
        return parse_labels(path.read_text())
    except KittiFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


def label_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(directory.glob("*.txt"))


def grid_spec_of(args):
    n_l, n_h, n_w = args.grid_cells
    d_l, d_h, d_w = args.grid_size
    return GridSpec(int(n_l), int(n_h), int(n_w), d_l, d_h, d_w)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text, out):
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _map_frames(fn, jobs, work):
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, work))
    return [fn(w) for w in work]


# -- refine ---------------------------------------------------------------

def _nearest_gt(proposal, gts):
    best, best_d = None, math.inf
    for g in gts:
        d = math.hypot(g.location[0] - proposal.location[0], g.location[2] - proposal.location[2])
        if g.category == proposal.category and d < best_d:
            best, best_d = g, d
    return best


def _refine_frame(job):
    """Refine one proposal file. Returns an error message or None."""
    path, opts = job
    name = Path(path).stem
    try:
        proposals = read_labels(path)
        spec = opts["grid"]
        gts = None
        if opts["oracle_gt"] is not None:
            gts = read_labels(Path(opts["oracle_gt"]) / f"{name}.txt")
        out = []
        for idx, rec in enumerate(proposals):
            if rec.category == "DontCare":
                out.append(rec)
                continue
            box = box_from_label(rec)
            if gts is None:
                arr = container.load(Path(opts["maps"]) / f"{name}_{idx}.bin")
                if arr.shape != (spec.n_w, spec.n_l, 9):
                    raise DataError(f"{name}_{idx}.bin: map shape {arr.shape} does not match grid "
                                    f"({spec.n_w}, {spec.n_l}, 9)")
                maps = PartConfidenceMaps.from_channels_last(arr.astype(np.float64), opts["sigma"])
                box = refine_with_maps(box, maps, spec, opts["temperature"], opts["center_only"])
            else:
                gt = _nearest_gt(rec, gts)
                if gt is not None:
                    rng = make_rng(opts["seed"], frame_key(name), idx) if opts["seed"] is not None else None
                    box = oracle_refine(box, box_from_label(gt), spec, opts["sigma"],
                                        opts["temperature"], opts["noise"], rng,
                                        iterations=opts["iterations"], center_only=opts["center_only"])
            out.append(label_from_box(box, template=rec, score=rec.score))
        write_atomic(Path(opts["out"]) / f"{name}.txt", serialize_labels(out))
    except (DataError, *DATA_ERRORS) as exc:
        return f"{path}: {exc}"
    return None


def cmd_refine(args):
    if (args.maps is None) == (args.oracle_gt is None):
        raise UsageError("give exactly one of --maps or --oracle-gt")
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    if args.maps is not None and args.iterations != 1:
        raise UsageError("--iterations needs --oracle-gt; stored maps belong to the first grid")
    noise = OracleNoise(args.map_noise, args.dropout)
    if args.oracle_gt is not None and (noise.map_noise_std > 0 or noise.dropout_parts > 0) \
            and args.seed is None:
        raise UsageError("a noisy oracle needs --seed")
    opts = {
        "grid": grid_spec_of(args), "maps": args.maps, "oracle_gt": args.oracle_gt,
        "out": args.out, "iterations": args.iterations, "temperature": args.temperature,
        "sigma": args.sigma, "noise": noise, "seed": args.seed, "center_only": args.center_only,
    }
    files = label_files(args.proposals)
    errors = [e for e in _map_frames(_refine_frame, args.jobs, [(str(f), opts) for f in files]) if e]
    for e in errors:
        log.error("%s", e)
    log.info("refined %d of %d frames", len(files) - len(errors), len(files))
    return EXIT_DATA if errors else EXIT_OK


# -- evaluate / bins ------------------------------------------------------

def load_frames(gt_dir, pred_dir):
    frames = []
    for gt_path in label_files(gt_dir):
        pred_path = Path(pred_dir) / gt_path.name
        preds = read_labels(pred_path) if pred_path.exists() else []
        try:
            frames.append(DetectionFrame(gt_path.stem, read_labels(gt_path), preds))
        except ValueError as exc:
            raise DataError(f"{pred_path}: {exc}") from None
    return frames


def _load_overrides(path):
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_evaluate(args):
    frames = load_frames(args.gt, args.pred)
    filters = difficulty_filters(_load_overrides(args.difficulty))
    levels = LEVELS if args.level == "all" else (args.level,)
    reports = []
    for level in levels:
        curve = compute_ap(frames, args.metric, args.iou, level, args.category, filters)
        reports.append({
            "metric": args.metric, "level": level, "iou_threshold": args.iou,
            "category": args.category, **curve.to_dict(),
        })
    _emit(_dump_json(reports if args.level == "all" else reports[0]), args.out)
    return EXIT_OK


def cmd_bins(args):
    if len(args.bins) < 2:
        raise UsageError("--bins needs at least two edges")
    runs = [bin_analysis(load_frames(args.gt, p), args.attribute, args.bins, args.match_iou,
                         args.category) for p in args.pred]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if len(runs) == 1:
        writer.writerow(["lo", "hi", "n_gt", "matched", "mean_iou"])
    else:
        writer.writerow(["lo", "hi", "n_gt", "matched_before", "mean_iou_before",
                         "matched_after", "mean_iou_after"])
    for i, row in enumerate(runs[0]):
        cells = [row.lo, row.hi, row.n_gt]
        for run in runs:
            r = run[i]
            cells += [r.matched_count, "" if r.mean_iou is None else f"{r.mean_iou:.6f}"]
        writer.writerow(cells)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- budget ---------------------------------------------------------------

def budget_rows(deltas, ns, spec, global_range, delta_g):
    header = ["delta", "vanilla_novs"] + [f"snvc_novs_{n}" for n in ns] + ["vernier_grid_novs"]
    rows = []
    for d in deltas:
        rows.append([d, voxel_budget_uniform(*global_range, d)]
                    + [voxel_budget_snvc(spec, n, global_range, delta_g) for n in ns]
                    + [spec.n_candidates])
    return header, rows


def cmd_budget(args):
    if len(args.global_range) != 3:
        raise UsageError("--global-range takes L,W,H")
    header, rows = budget_rows(args.deltas, args.n, grid_spec_of(args), tuple(args.global_range),
                               args.delta_g)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- synth ----------------------------------------------------------------

def _noise_of(args):
    return NoiseSpec(args.noise_x, args.noise_y, args.noise_z, args.noise_h, args.noise_w,
                     args.noise_l, math.radians(args.noise_yaw_deg))


def _synth_frame(job):
    path, opts = job
    name = Path(path).stem
    gts = [r for r in read_labels(path) if r.category in opts["categories"]]
    rng = make_rng(opts["seed"], frame_key(name))
    out = Path(opts["out"])
    proposals = []
    for idx, rec in enumerate(gts):
        prop, target = make_training_pair(box_from_label(rec), opts["noise"], opts["grid"],
                                          opts["sigma"], rng)
        proposals.append(label_from_box(prop, template=rec, score=1.0))
        write_atomic(out / "maps" / f"{name}_{idx}.bin", container.pack(target.to_channels_last()))
    write_atomic(out / "proposals" / f"{name}.txt", serialize_labels(proposals))
    return len(gts)


def cmd_synth(args):
    seed = _require_seed(args)
    noise = _noise_of(args)
    spec = grid_spec_of(args)
    opts = {"categories": set(args.category), "seed": seed, "noise": noise, "grid": spec,
            "sigma": args.sigma, "out": args.out}
    files = label_files(args.labels)
    for f in files:
        read_labels(f)  # fail before writing anything
    counts = _map_frames(_synth_frame, args.jobs, [(str(f), opts) for f in files])
    manifest = {
        "seed": seed, "noise": noise.to_dict(), "grid": asdict(spec), "sigma_cells": args.sigma,
        "categories": sorted(args.category), "map_layout": "n_w,n_l,parts float32",
        "frames": {f.stem: n for f, n in zip(files, counts)},
    }
    write_atomic(Path(args.out) / "manifest.json", _dump_json(manifest))
    log.info("synthesized %d proposals over %d frames", sum(counts), len(files))
    return EXIT_OK


def _scene_frame(job):
    index, opts = job
    spec = opts["spec"]
    name = f"{index:06d}"
    scene = render_scene(spec, make_rng(opts["seed"], index))
    out = Path(opts["out"])
    labels = []
    for box in scene.boxes:
        bbox, trunc = bbox2d_of(box, spec.rig.p_left, spec.image_size)
        rec = label_from_box(box)
        labels.append(LabelRecord("Car", round(trunc, 2), 0, rec.alpha, bbox, rec.dims,
                                  rec.location, rec.rotation_y))
    # The cloud is already in the camera frame, so the extrinsics are identity.
    rig = CameraRig(spec.rig.p_left, spec.rig.p_right, np.eye(3), np.eye(4)[:3])
    write_atomic(out / "label_2" / f"{name}.txt", serialize_labels(labels))
    write_atomic(out / "calib" / f"{name}.txt", serialize_calib(rig))
    write_atomic(out / "features_left" / f"{name}.bin", scene.left.to_bytes())
    write_atomic(out / "features_right" / f"{name}.bin", scene.right.to_bytes())
    write_atomic(out / "velodyne" / f"{name}.bin", write_point_cloud(scene.cloud))
    return len(scene.boxes)


def cmd_synth_scene(args):
    seed = _require_seed(args)
    if args.frames < 0:
        raise UsageError("--frames must be >= 0")
    spec = SceneSpec(n_boxes=args.n_boxes, depth_range=tuple(args.depth_range))
    opts = {"spec": spec, "seed": seed, "out": args.out}
    counts = _map_frames(_scene_frame, args.jobs, [(i, opts) for i in range(args.frames)])
    log.info("rendered %d frames with %d boxes", len(counts), sum(counts))
    return EXIT_OK


# -- parse-check ----------------------------------------------------------

def _guess_kind(path):
    if path.suffix == ".txt":
        head = path.read_text()[:200].lstrip()
        return "calib" if head.startswith(("P0:", "P1:", "P2:", "P3:")) else "label"
    return "velodyne" if path.parent.name == "velodyne" else "container"


def check_file(path, kind="auto"):
    path = Path(path)
    kind = _guess_kind(path) if kind == "auto" else kind
    if kind == "label":
        read_labels(path)
    elif kind == "calib":
        try:
            parse_calib(path.read_text())
        except KittiFormatError as exc:
            raise DataError(f"{path}: {exc}") from None
    elif kind == "velodyne":
        read_point_cloud(path.read_bytes())
    else:
        container.load(path)
    return kind


def cmd_parse_check(args):
    paths = []
    for p in map(Path, args.paths):
        paths.extend(sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p])
    failed = 0
    for p in paths:
        try:
            kind = check_file(p, args.kind)
            print(f"ok {kind} {p}")
        except DataError as exc:
            failed += 1
            print(f"error {exc}", file=sys.stderr)
        except DATA_ERRORS as exc:
            failed += 1
            print(f"error {p}: {exc}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


# -- argument parsing -----------------------------------------------------

def _require_seed(args):
    if args.seed is None:
        raise UsageError("this subcommand is randomized and needs an explicit --seed")
    return args.seed


def _add_grid(p):
    p.add_argument("--grid-cells", type=_ints, default=[192, 32, 128], metavar="L,H,W",
                   help="candidate counts along length, height, width")
    p.add_argument("--grid-size", type=_floats, default=[0.03, 0.10, 0.03], metavar="DL,DH,DW",
                   help="cell size in meters")


def _add_common(p):
    p.add_argument("--config", help="JSON file of option defaults; flags win")
    p.add_argument("--jobs", type=int, default=1, help="frames processed in parallel")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="vernier", description="Local voxel-grid refinement of 3D box proposals.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["refine"] = sub.add_parser("refine", help="refine proposal labels")
    p.add_argument("--proposals", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--maps", help="directory of <frame>_<idx>.bin confidence maps")
    p.add_argument("--oracle-gt", help="GT label directory for oracle maps")
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--map-noise", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--center-only", action="store_true")
    p.add_argument("--seed", type=int)
    _add_grid(p)

    p = subs["evaluate"] = sub.add_parser("evaluate", help="KITTI-style AP report (JSON)")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metric", choices=["3d", "bev"], default="3d")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--level", choices=[*LEVELS, "all"], default="moderate")
    p.add_argument("--category", default="Car")
    p.add_argument("--difficulty", help="JSON file overriding difficulty thresholds")
    p.add_argument("--out")

    p = subs["bins"] = sub.add_parser("bins", help="matched count and IoU per attribute bin (CSV)")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, action="append",
                   help="prediction dir; give twice for before/after columns")
    p.add_argument("--attribute", choices=ATTRIBUTES, default="depth")
    p.add_argument("--bins", type=_floats, default=[0, 10, 20, 30, 40, 50, 60, 70])
    p.add_argument("--match-iou", type=float, default=0.3)
    p.add_argument("--category", default="Car")
    p.add_argument("--out")

    p = subs["budget"] = sub.add_parser("budget", help="voxel counts of dense vs per-proposal grids (CSV)")
    p.add_argument("--deltas", type=_floats, default=[0.05, 0.1, 0.2, 0.3, 0.4])
    p.add_argument("--n", type=_ints, default=[1, 10, 32], help="proposal counts")
    p.add_argument("--global-range", type=_floats, default=[60.0, 60.0, 4.0], metavar="L,W,H")
    p.add_argument("--delta-g", type=float, default=0.2)
    p.add_argument("--out")
    _add_grid(p)

    p = subs["synth"] = sub.add_parser("synth", help="noisy proposals and target maps from labels")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--category", action="append", default=None)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    defaults = NoiseSpec()
    for axis in "xyzhwl":
        p.add_argument(f"--noise-{axis}", type=float, default=getattr(defaults, f"sigma_{axis}"))
    p.add_argument("--noise-yaw-deg", type=float, default=math.degrees(defaults.sigma_theta))
    _add_grid(p)

    p = subs["synth-scene"] = sub.add_parser("synth-scene", help="synthetic stereo scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--n-boxes", type=int, default=3)
    p.add_argument("--depth-range", type=_floats, default=[8.0, 40.0], metavar="ZMIN,ZMAX")

    p = subs["parse-check"] = sub.add_parser("parse-check", help="validate input files")
    p.add_argument("paths", nargs="+")
    p.add_argument("--kind", choices=["auto", "label", "calib", "velodyne", "container"],
                   default="auto")

    for p in subs.values():
        _add_common(p)
    return parser, subs


COMMANDS = {
    "refine": cmd_refine, "evaluate": cmd_evaluate, "bins": cmd_bins, "budget": cmd_budget,
    "synth": cmd_synth, "synth-scene": cmd_synth_scene, "parse-check": cmd_parse_check,
}


def _config_path(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


def parse_args(argv):
    parser, subs = build_parser()
    command = next((a for a in argv if a in subs), None)
    config_path = _config_path(argv)
    if command is not None and config_path:
        sub = subs[command]
        try:
            config = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {config_path}: {exc}")
        if not isinstance(config, dict):
            parser.error("config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = set(config) - {a.dest for a in sub._actions}
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        # Config values become defaults, so explicit flags still win.
        for action in sub._actions:
            if action.dest in config:
                action.required = False
        sub.set_defaults(**config)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    if getattr(args, "category", "") is None:
        args.category = ["Car"]
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    return args


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vernier {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"error {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
