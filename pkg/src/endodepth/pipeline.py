"""Glue between file records and the two depth pipelines."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .calibration import (HandEyeFrame, HandEyeResult, PivotResult, hand_eye_calibrate,
                          measured_point_in_camera, pivot_calibrate, reproject_measured,
                          stylus_tip_in_world)
from .camera import CameraIntrinsics, PointBehindCamera, StereoRig
from .evaluation import EvaluationReport, build_report
from .rigid import RigidTransform
from .scene import observation_files
from .stereo import (TP_RADIUS_PX, LabeledPoint, PointMatch, match_true_positives,
                     stereo_correspond, triangulate_all)

log = logging.getLogger(__name__)


class InputError(ValueError):
    pass


def group_detections(records) -> dict:
    """``{frame_id: {side: {source: [(id|None, px)]}}}`` from detection records."""
    out = {}
    for rec in records:
        try:
            frame, side, source = int(rec["frame_id"]), rec["side"], rec["source"]
            pts = [(p.get("id"), np.asarray(p["px"], float)) for p in rec["points"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed detection record: {exc}") from exc
        if side not in ("left", "right") or source not in ("gt", "model"):
            raise InputError(f"frame {frame}: bad side/source {side!r}/{source!r}")
        if source == "gt" and any(pid is None for pid, _ in pts):
            raise InputError(f"frame {frame} {side}: ground-truth points need an id")
        slot = out.setdefault(frame, {}).setdefault(side, {})
        if source in slot:
            raise InputError(f"frame {frame} {side}: duplicate {source} record")
        slot[source] = pts
    return out


def _side_matches(frame, side, sources, tp_radius):
    """(px, id) pairs for one image, TP-filtered when model points have a gt to check against."""
    gt, model = sources.get("gt"), sources.get("model")
    if model is not None and gt is not None:
        labels = [LabeledPoint(int(i), side, p, "gt") for i, p in gt]
        return list(match_true_positives([p for _, p in model], labels, tp_radius)), "model"
    if gt is not None:
        return [(p, int(i)) for i, p in gt], "gt"
    if all(i is not None for i, _ in model):
        return [(p, int(i)) for i, p in model], "model"
    raise InputError(f"frame {frame} {side}: model points without ids need ground truth")


def match_frames(grouped: dict, tp_radius: float = TP_RADIUS_PX) -> dict:
    out = {}
    for frame in sorted(grouped):
        sides = grouped[frame]
        if "left" not in sides or "right" not in sides:
            log.warning("frame %d: only one side present, skipped", frame)
            out[frame] = []
            continue
        left, src = _side_matches(frame, "left", sides["left"], tp_radius)
        right, _ = _side_matches(frame, "right", sides["right"], tp_radius)
        out[frame] = stereo_correspond(left, right, src)
    return out


def triangulate_frames(rig: StereoRig, matches: dict, threads: int = 1):
    frames = sorted(matches)

    def run(f):
        return triangulate_all(rig, matches[f])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, frames))
    else:
        results = [run(f) for f in frames]
    points, failures = {}, {}
    for f, (pts, failed) in zip(frames, results):
        points[f] = pts
        if failed:
            failures[f] = failed
            log.warning("frame %d: %d triangulation failures", f, len(failed))
    return points, failures


def match_records(matches: dict) -> list:
    return [{"frame_id": f, "matches": [m.to_record() for m in matches[f]]} for f in sorted(matches)]


def triangulation_records(points: dict) -> list:
    return [{"frame_id": f, "points": [p.to_record() for p in points[f]]} for f in sorted(points)]


def read_matches(records) -> dict:
    return {int(r["frame_id"]): [PointMatch(int(m["id"]), np.asarray(m["left_px"], float),
                                            np.asarray(m["right_px"], float))
                                 for m in r["matches"]]
            for r in records}


def read_triangulation(records) -> list:
    return [(int(r["frame_id"]), int(p["id"]), np.asarray(p["camera_left_mm"], float))
            for r in records for p in r["points"]]


def tracker_observations(rig: StereoRig, pivot: PivotResult, d_rc: RigidTransform,
                         stylus: dict, tracking: dict):
    """Stylus-measured points seen through the hand-eye chain.

    ``stylus`` maps point id -> stylus pose (marker -> world); ``tracking``
    maps frame id -> endoscope marker pose (world -> marker). Returns
    ``(reproj, d_he, skipped)`` with ``reproj[side]`` and ``d_he`` as
    ``(frame, id, value)`` lists.
    """
    world = {i: stylus_tip_in_world(p, pivot) for i, p in stylus.items()}
    d_right = rig.left_to_right @ d_rc
    reproj = {"left": [], "right": []}
    d_he, skipped = [], []
    for f in sorted(tracking):
        M = tracking[f]
        for i in sorted(world):
            pw = world[i]
            try:
                left = reproject_measured(pw, d_rc, M, rig.left)[0]
                right = reproject_measured(pw, d_right, M, rig.right)[0]
            except PointBehindCamera:
                skipped.append((f, i))
                continue
            reproj["left"].append((f, i, left))
            reproj["right"].append((f, i, right))
            d_he.append((f, i, measured_point_in_camera(pw, d_rc, M)))
    return reproj, d_he, skipped


def evaluate(dataset: str, rig: StereoRig, pivot: PivotResult, handeye: HandEyeResult,
             stylus: dict, tracking: dict, gt_matches: dict, model_matches: dict,
             gt_points: list, model_points: list, caliper) -> EvaluationReport:
    reproj, d_he, skipped = tracker_observations(rig, pivot, handeye.d_rc, stylus, tracking)

    def px(matches, side):
        attr = "left_px" if side == "left" else "right_px"
        return [(f, m.id, getattr(m, attr)) for f in sorted(matches) for m in matches[f]]

    points_2d = {
        "gt": {s: px(gt_matches, s) for s in ("left", "right")},
        "model": {s: px(model_matches, s) for s in ("left", "right")},
        "reproj": reproj,
    }
    points_3d = {"gt": gt_points, "model": model_points, "he": d_he}
    report = build_report(dataset, points_2d, points_3d, caliper)
    if skipped:
        report.missing["tracker/behind_camera"] = f"{len(skipped)} stylus points behind the camera"
    return report


def run_records(files: dict, dataset: str = "synthetic", tp_radius: float = TP_RADIUS_PX,
                threads: int = 1):
    """Both pipelines end to end on in-memory file records.

    ``files`` maps the simulator's file names to their parsed JSON content.
    Returns ``(report, stages)`` where ``stages`` holds the intermediate
    results (pivot, hand-eye, matches, triangulated points).
    """
    rig = StereoRig.from_record(files["rig.json"])
    pivot = pivot_calibrate([RigidTransform.from_record(r) for r in files["pivot_poses.json"]])
    handeye = hand_eye_calibrate([HandEyeFrame.from_record(r) for r in files["handeye_session.json"]],
                                 CameraIntrinsics.from_record(files["intrinsics_left.json"]),
                                 threads=threads)
    gt_matches = match_frames(group_detections(files["detections_gt.json"]), tp_radius)
    model_matches = match_frames(group_detections(files["detections_gt.json"]
                                                  + files["detections_model.json"]), tp_radius)
    gt_tri, _ = triangulate_frames(rig, gt_matches, threads)
    model_tri, _ = triangulate_frames(rig, model_matches, threads)
    stylus = {int(r["id"]): RigidTransform.from_record(r["stylus_pose"])
              for r in files["measurements.json"]}
    tracking = {int(r["frame_id"]): RigidTransform.from_record(r["marker_pose"])
                for r in files["tracking.json"]}
    caliper = [((int(r["ids"][0]), int(r["ids"][1])), float(r["distance_mm"]))
               for r in files["caliper.json"]]
    report = evaluate(dataset, rig, pivot, handeye, stylus, tracking, gt_matches, model_matches,
                      read_triangulation(triangulation_records(gt_tri)),
                      read_triangulation(triangulation_records(model_tri)), caliper)
    stages = {"rig": rig, "pivot": pivot, "handeye": handeye, "gt_matches": gt_matches,
              "model_matches": model_matches, "gt_points": gt_tri, "model_points": model_tri}
    return report, stages


def run_scene(scene, variant: str = "noisy", **kw):
    obs = scene.noisy if variant == "noisy" else scene.clean
    return run_records(observation_files(obs, scene.rig, scene.caliper), **kw)
