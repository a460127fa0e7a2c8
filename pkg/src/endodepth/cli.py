"""Command-line front end.

Exit codes: 0 success, 2 bad input or config, 3 numerical/degenerate failure.
Diagnostics go to stderr; data only to the named output files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .calibration import (CalibrationError, HandEyeFrame, HandEyeResult, PivotResult,
                          hand_eye_calibrate, pivot_calibrate)
from .camera import CameraIntrinsics, StereoRig
from .evaluation import EvaluationError
from .pipeline import (InputError, evaluate, group_detections, match_frames, match_records,
                       read_matches, read_triangulation, triangulate_frames,
                       triangulation_records)
from .rigid import RigidTransform
from .scene import ConfigError, SceneConfig, Unviewable, dump_json, generate_scene, write_scene
from .stereo import TP_RADIUS_PX

log = logging.getLogger("endodepth")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise Failure(EXIT_INPUT, f"cannot read {path}: {exc}") from exc


def _parse(what, fn, *args):
    try:
        return fn(*args)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, CalibrationError):
            raise
        raise Failure(EXIT_INPUT, f"{what}: {type(exc).__name__}: {exc}") from exc


def _manifest(path, command, inputs, outputs, started, seed=None):
    rec = {"command": command, "inputs": [str(p) for p in inputs],
           "outputs": [str(p) for p in outputs], "tool_version": __version__,
           "wall_time_s": round(time.perf_counter() - started, 6)}
    if seed is not None:
        rec["seed"] = seed
    dump_json(rec, path)


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def cmd_simulate(args, started):
    cfg_dict = _load(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    try:
        cfg = SceneConfig.from_dict(cfg_dict)
        scene = generate_scene(cfg)
    except ConfigError as exc:
        raise Failure(EXIT_INPUT, f"config error in field '{exc.field}': {exc}") from exc
    except Unviewable as exc:
        raise Failure(EXIT_INPUT, f"config rejected, geometry unviewable: {exc}") from exc
    out = Path(args.out_dir)
    written = write_scene(scene, out)
    _manifest(out / "manifest.json", "simulate", [args.config], written, started, cfg.seed)


def cmd_pivot(args, started):
    recs = _load(args.poses)
    poses = _parse("pose file", lambda: [RigidTransform.from_record(r) for r in recs])
    try:
        res = pivot_calibrate(poses)
    except CalibrationError as exc:
        code = EXIT_INPUT if isinstance(exc, ValueError) else EXIT_NUMERIC
        raise Failure(code, f"pivot calibration failed: {exc}") from exc
    dump_json(res.to_record(), args.out)
    _manifest(_manifest_path(args.out), "pivot", [args.poses], [args.out], started)


def cmd_handeye(args, started):
    session = _load(args.session)
    frames = _parse("session file", lambda: [HandEyeFrame.from_record(r) for r in session])
    intr = _parse("intrinsics file", CameraIntrinsics.from_record, _load(args.intrinsics))
    try:
        res = hand_eye_calibrate(frames, intr, threads=args.threads)
    except CalibrationError as exc:
        raise Failure(EXIT_NUMERIC, f"hand-eye calibration failed: {exc}") from exc
    for i, err in sorted(res.frame_errors.items()):
        log.warning("frame %d skipped: %s", i, err)
    dump_json(res.to_record(), args.out)
    _manifest(_manifest_path(args.out), "handeye", [args.session, args.intrinsics],
              [args.out], started)


def cmd_triangulate(args, started):
    records = []
    for path in args.detections:
        data = _load(path)
        records += data if isinstance(data, list) else [data]
    rig = _parse("rig file", StereoRig.from_record, _load(args.rig))
    try:
        matches = match_frames(group_detections(records), args.tp_radius)
    except InputError as exc:
        raise Failure(EXIT_INPUT, str(exc)) from exc
    if not any(matches.values()):
        raise Failure(EXIT_NUMERIC, "no stereo matches in any frame")
    points, failures = triangulate_frames(rig, matches, args.threads)
    if not any(points.values()):
        raise Failure(EXIT_NUMERIC, f"every triangulation failed: {failures}")
    dump_json(triangulation_records(points), args.out)
    outputs = [args.out]
    if args.matches_out:
        dump_json(match_records(matches), args.matches_out)
        outputs.append(args.matches_out)
    _manifest(_manifest_path(args.out), "triangulate", [*args.detections, args.rig],
              outputs, started)


def cmd_evaluate(args, started):
    rig = _parse("rig file", StereoRig.from_record, _load(args.rig))
    pivot = _parse("pivot file", PivotResult.from_record, _load(args.pivot))
    handeye = _parse("hand-eye file", HandEyeResult.from_record, _load(args.handeye))
    stylus = _parse("measurement file", lambda: {
        int(r["id"]): RigidTransform.from_record(r["stylus_pose"]) for r in _load(args.measurements)})
    tracking = _parse("tracking file", lambda: {
        int(r["frame_id"]): RigidTransform.from_record(r["marker_pose"]) for r in _load(args.tracking)})
    gt_m = _parse("gt matches", read_matches, _load(args.gt_matches))
    model_m = _parse("model matches", read_matches, _load(args.model_matches))
    gt_p = _parse("gt points", read_triangulation, _load(args.gt_points))
    model_p = _parse("model points", read_triangulation, _load(args.model_points))
    caliper = _parse("caliper file", lambda: [((int(r["ids"][0]), int(r["ids"][1])),
                                               float(r["distance_mm"])) for r in _load(args.caliper)])
    try:
        report = evaluate(args.dataset, rig, pivot, handeye, stylus, tracking, gt_m, model_m,
                          gt_p, model_p, caliper)
    except EvaluationError as exc:
        raise Failure(EXIT_INPUT, str(exc)) from exc
    if all(st is None for _, st in report.cells()):
        raise Failure(EXIT_NUMERIC, "every report cell is empty")
    for cell, why in sorted(report.missing.items()):
        log.warning("missing %s: %s", cell, why)
    text_path = Path(args.out).with_suffix(".txt")
    dump_json(report.to_record(), args.out)
    text_path.write_text(report.to_text())
    inputs = [args.rig, args.pivot, args.handeye, args.measurements, args.tracking,
              args.gt_matches, args.model_matches, args.gt_points, args.model_points, args.caliper]
    _manifest(_manifest_path(args.out), "evaluate", inputs, [args.out, text_path], started)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="endodepth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pivot", help="stylus pivot calibration")
    s.add_argument("poses")
    s.add_argument("out")
    s.set_defaults(func=cmd_pivot)

    s = sub.add_parser("handeye", help="marker -> camera hand-eye calibration")
    s.add_argument("session")
    s.add_argument("intrinsics")
    s.add_argument("out")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_handeye)

    s = sub.add_parser("triangulate", help="TP filter, stereo matching and triangulation")
    s.add_argument("detections", nargs="+")
    s.add_argument("--rig", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--matches-out")
    s.add_argument("--tp-radius", type=float, default=TP_RADIUS_PX)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("evaluate", help="2D / 3D / caliper error report")
    s.add_argument("--dataset", default="data")
    for name in ("rig", "pivot", "handeye", "measurements", "tracking", "gt-matches",
                 "model-matches", "gt-points", "model-points", "caliper", "out"):
        s.add_argument(f"--{name}", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "tp_radius", 1.0) <= 0:
        print("error: --tp-radius must be positive", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    started = time.perf_counter()
    try:
        args.func(args, started)
    except Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
