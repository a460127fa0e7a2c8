"""Image-based depth: true-positive filtering, left/right pairing, triangulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import StereoRig, project_camera, undistort
from .rigid import apply

TP_RADIUS_PX = 6.0
PARALLEL_LIMIT = 1e-10


class TriangulationError(RuntimeError):
    pass


class RaysNearParallel(TriangulationError):
    pass


class NegativeDepth(TriangulationError):
    pass


@dataclass(frozen=True)
class LabeledPoint:
    id: int | None
    side: str    # "left" | "right"
    px: np.ndarray
    source: str  # "gt" | "model"


@dataclass(frozen=True)
class PointMatch:
    id: int
    left_px: np.ndarray
    right_px: np.ndarray
    source: str = "gt"

    def to_record(self) -> dict:
        return {"id": int(self.id), "left_px": [float(v) for v in self.left_px],
                "right_px": [float(v) for v in self.right_px]}


@dataclass(frozen=True)
class TriangulatedPoint:
    id: int
    position: np.ndarray  # left-camera frame, mm
    reproj_residual: float

    def to_record(self) -> dict:
        return {"id": int(self.id), "camera_left_mm": [float(v) for v in self.position],
                "reproj_residual_px": float(self.reproj_residual)}


@dataclass
class TPResult:
    matches: list  # (prediction px, gt id), sorted by gt id
    false_positives: list  # indices into the prediction list
    distances: list

    def __iter__(self):
        return iter(self.matches)

    def __len__(self):
        return len(self.matches)


def match_true_positives(predictions, ground_truth, threshold: float = TP_RADIUS_PX) -> TPResult:
    """Greedy one-to-one assignment of predictions to labelled points.

    Pairs closer than ``threshold`` are accepted in ascending distance,
    ties broken by ground-truth id then prediction index.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    preds = np.asarray(predictions, dtype=float).reshape(-1, 2)
    gt_ids = [g.id for g in ground_truth]
    if len(set(gt_ids)) != len(gt_ids) or any(i is None for i in gt_ids):
        raise ValueError("ground-truth points need unique ids")
    if len(preds) == 0 or not ground_truth:
        return TPResult([], list(range(len(preds))), [])
    gt = np.stack([np.asarray(g.px, float) for g in ground_truth])
    d = np.linalg.norm(preds[:, None, :] - gt[None, :, :], axis=2)
    pi, gi = np.nonzero(d <= threshold)
    order = sorted(zip(d[pi, gi], [gt_ids[g] for g in gi], pi, gi))
    used_p, used_g, out = set(), set(), []
    for dist, gid, p, g in order:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        out.append((preds[p], gid, float(dist)))
    out.sort(key=lambda m: m[1])
    fps = [i for i in range(len(preds)) if i not in used_p]
    return TPResult([(p, gid) for p, gid, _ in out], fps, [m[2] for m in out])


def stereo_correspond(left_matched, right_matched, source: str = "gt") -> list[PointMatch]:
    """Join per-side (px, gt_id) lists on gt id; ids seen on one side only drop out."""
    right = {gid: px for px, gid in right_matched}
    out = [PointMatch(gid, np.asarray(px, float), np.asarray(right[gid], float), source)
           for px, gid in left_matched if gid in right]
    return sorted(out, key=lambda m: m.id)


def triangulate(rig: StereoRig, m: PointMatch) -> TriangulatedPoint:
    """Linear two-view triangulation, result in the left-camera frame.

    Both observations are undistorted first; the left camera is ``[I|0]``
    and the right ``[R|t]`` from the rig. Work is done in baseline units
    for conditioning.
    """
    xl = undistort(rig.left, m.left_px)[0]
    xr = undistort(rig.right, m.right_px)[0]
    scale = rig.baseline
    R = rig.left_to_right.rotation
    t = rig.left_to_right.translation / scale
    Pl = np.hstack([np.eye(3), np.zeros((3, 1))])
    Pr = np.hstack([R, t[:, None]])
    A = np.stack([xl[0] * Pl[2] - Pl[0], xl[1] * Pl[2] - Pl[1],
                  xr[0] * Pr[2] - Pr[0], xr[1] * Pr[2] - Pr[1]])
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(A)
    X = vt[-1]
    # rank-3 is the generic case; losing another rank, or a solution at
    # infinity, means the two rays do not meet
    if s[2] < PARALLEL_LIMIT * s[0] or abs(X[3]) < PARALLEL_LIMIT * np.linalg.norm(X[:3]):
        raise RaysNearParallel(f"point {m.id}: rays are (near) parallel")
    p = X[:3] / X[3] * scale
    pr = apply(rig.left_to_right, p)
    if p[2] <= 0 or pr[2] <= 0:
        raise NegativeDepth(f"point {m.id}: triangulated behind a camera")
    rl = np.linalg.norm(project_camera(rig.left, p)[0] - m.left_px)
    rr = np.linalg.norm(project_camera(rig.right, pr)[0] - m.right_px)
    return TriangulatedPoint(m.id, p, float(max(rl, rr)))


def triangulate_all(rig: StereoRig, matches) -> tuple[list[TriangulatedPoint], dict]:
    """Triangulate every match; failures are collected, not raised."""
    points, failed = [], {}
    for m in matches:
        try:
            points.append(triangulate(rig, m))
        except TriangulationError as exc:
            failed[m.id] = str(exc)
    return points, failed
