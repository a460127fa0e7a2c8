"""Tracker-side calibration: stylus pivot, camera extrinsics, hand-eye.

Pose conventions used throughout:

* stylus / pivot poses map marker coordinates into tracker-world coordinates;
* a hand-eye ``marker_pose`` maps world coordinates into the marker frame,
  so that ``E = D . marker_pose`` is the world -> camera extrinsics and
  ``D = E . marker_pose^-1`` is the marker -> camera transform.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import (CameraIntrinsics, PointBehindCamera, normalized_to_pixel, project,
                     undistort)
from .rigid import RigidTransform, apply, hat, invert, nearest_rotation, rotvec_to_matrix

log = logging.getLogger(__name__)

PIVOT_MIN_POSES = 10
PIVOT_COND_LIMIT = 1e-8
PNP_MIN_POINTS = 6
PNP_MAX_ITER = 30
PNP_STEP_TOL = 1e-12
PLANAR_RATIO = 1e-3


class CalibrationError(RuntimeError):
    pass


class TooFewPoses(CalibrationError, ValueError):
    pass


class DegenerateMotion(CalibrationError):
    pass


class InsufficientPoints(CalibrationError, ValueError):
    pass


class DegenerateConfiguration(CalibrationError):
    pass


class AllFramesFailed(CalibrationError):
    pass


# ---------------------------------------------------------------------------
# pivot calibration

@dataclass
class PivotResult:
    tip_offset: np.ndarray   # marker frame, mm
    pivot_point: np.ndarray  # world frame, mm
    rms_3d: float
    mean_error: float
    max_error: float
    major_angle: float
    minor_angle: float
    n_poses: int

    def to_record(self) -> dict:
        return {"tip_offset": [float(v) for v in self.tip_offset],
                "pivot_point": [float(v) for v in self.pivot_point],
                "rms_3d": self.rms_3d, "mean_error": self.mean_error,
                "max_error": self.max_error, "major_angle": self.major_angle,
                "minor_angle": self.minor_angle, "n_poses": self.n_poses}

    @classmethod
    def from_record(cls, rec: dict) -> "PivotResult":
        return cls(np.asarray(rec["tip_offset"], float), np.asarray(rec["pivot_point"], float),
                   float(rec["rms_3d"]), float(rec["mean_error"]), float(rec["max_error"]),
                   float(rec["major_angle"]), float(rec["minor_angle"]), int(rec["n_poses"]))


def _angular_extent(axes: np.ndarray, center: np.ndarray, direction: np.ndarray) -> float:
    ang = np.arctan2(axes @ direction, axes @ center)
    return float(np.degrees(ang.max() - ang.min()))


def coverage_angles(rotations: np.ndarray) -> tuple[float, float]:
    """Angular coverage of the stylus axis (marker +z) over a pose set.

    The axes are projected onto the two principal transverse directions of
    their spread about the mean axis; each angle is the full extent of the
    axis within the plane spanned by the mean axis and that direction.
    """
    u = rotations[:, :, 2]
    mean = u.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        return 180.0, 180.0
    mean = mean / norm
    transverse = u - np.outer(u @ mean, mean)
    _, _, vt = np.linalg.svd(transverse, full_matrices=True)
    # vt rows span R^3; keep the two directions orthogonal to the mean axis
    basis = []
    for v in vt:
        v = v - (v @ mean) * mean
        for b in basis:
            v = v - (v @ b) * b
        if np.linalg.norm(v) > 1e-6:
            basis.append(v / np.linalg.norm(v))
        if len(basis) == 2:
            break
    a, b = (_angular_extent(u, mean, d) for d in basis)
    return max(a, b), min(a, b)


def pivot_calibrate(poses: list[RigidTransform]) -> PivotResult:
    """Least-squares tip offset and pivot point from marker->world poses.

    Solves ``R_i tip + t_i = pivot`` for all poses at once.
    """
    n = len(poses)
    if n < PIVOT_MIN_POSES:
        raise TooFewPoses(f"pivot calibration needs >= {PIVOT_MIN_POSES} poses, got {n}")
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    A = np.zeros((3 * n, 6))
    A[:, :3] = R.reshape(3 * n, 3)
    A[:, 3:] = -np.tile(np.eye(3), (n, 1))
    b = -t.reshape(3 * n)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] < PIVOT_COND_LIMIT * s[0]:
        raise DegenerateMotion("pose rotations too similar; tip offset is unobservable")
    x = Vt.T @ ((U.T @ b) / s)
    tip, pivot = x[:3], x[3:]
    resid = np.einsum("nij,j->ni", R, tip) + t - pivot
    err = np.linalg.norm(resid, axis=1)
    major, minor = coverage_angles(R)
    return PivotResult(tip, pivot, float(np.sqrt(np.mean(err**2))), float(err.mean()),
                       float(err.max()), major, minor, n)


def stylus_tip_in_world(stylus_pose: RigidTransform, pivot: PivotResult) -> np.ndarray:
    return apply(stylus_pose, pivot.tip_offset)


# ---------------------------------------------------------------------------
# perspective-n-point

@dataclass(frozen=True)
class Correspondence2D3D:
    image_point: np.ndarray  # px
    world_point: np.ndarray  # mm
    id: int

    def to_record(self) -> dict:
        return {"id": int(self.id), "image_px": [float(v) for v in self.image_point],
                "world_mm": [float(v) for v in self.world_point]}

    @classmethod
    def from_record(cls, rec: dict) -> "Correspondence2D3D":
        px = np.asarray(rec["image_px"], float)
        w = np.asarray(rec["world_mm"], float)
        if px.shape != (2,) or w.shape != (3,) or not (np.all(np.isfinite(px)) and np.all(np.isfinite(w))):
            raise ValueError(f"malformed correspondence {rec!r}")
        return cls(px, w, int(rec["id"]))


@dataclass
class PnPResult:
    pose: RigidTransform
    reproj_rms: float
    per_point_residuals: np.ndarray


def _hartley(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and RMS norm sqrt(dim)."""
    d = pts.shape[1]
    c = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = np.sqrt(d) / rms
    T = np.eye(d + 1)
    T[:d, :d] *= s
    T[:d, d] = -s * c
    return T


def _homog(pts):
    return np.hstack([pts, np.ones((len(pts), 1))])


def _dlt_init(world: np.ndarray, xn: np.ndarray) -> RigidTransform:
    T3, T2 = _hartley(world), _hartley(xn)
    X = _homog(world) @ T3.T
    x = _homog(xn) @ T2.T
    n = len(world)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = X
    A[0::2, 8:12] = -x[:, [0]] * X
    A[1::2, 4:8] = X
    A[1::2, 8:12] = -x[:, [1]] * X
    P = np.linalg.svd(A)[2][-1].reshape(3, 4)
    P = np.linalg.solve(T2, P) @ T3
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = P[:, :3]
    U, s, Vt = np.linalg.svd(M)
    return RigidTransform(U @ Vt, P[:, 3] / s.mean())


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    Ts, Td = _hartley(src), _hartley(dst)
    s = _homog(src) @ Ts.T
    d = _homog(dst) @ Td.T
    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = s
    A[0::2, 6:9] = -d[:, [0]] * s
    A[1::2, 3:6] = s
    A[1::2, 6:9] = -d[:, [1]] * s
    H = np.linalg.svd(A)[2][-1].reshape(3, 3)
    return np.linalg.solve(Td, H) @ Ts


def _planar_init(world: np.ndarray, xn: np.ndarray, centroid, basis) -> RigidTransform:
    # basis rows: two in-plane directions and the normal
    B = np.array(basis)
    if np.linalg.det(B) < 0:
        B[2] = -B[2]
    q = (world - centroid) @ B[:2].T
    H = _homography(q, xn)
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    scored = []
    for sign in (1.0, -1.0):
        h = sign * lam * H
        r1, r2 = h[:, 0], h[:, 1]
        Rp = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
        tp = h[:, 2]
        R = Rp @ B
        cand = RigidTransform(R, tp - R @ centroid)
        cam = apply(cand, world)
        in_front = int(np.sum(cam[:, 2] > 0))
        if in_front == len(world):
            cost = float(np.sum((cam[:, :2] / cam[:, 2:] - xn) ** 2))
        else:
            cost = np.inf
        scored.append((-in_front, cost, cand))
    (f0, c0, p0), (f1, c1, p1) = scored
    if f0 == f1 and (c0 == c1 or abs(c0 - c1) <= 1e-12):
        raise DegenerateConfiguration("planar pose ambiguity could not be resolved")
    return p0 if (f0, c0) < (f1, c1) else p1


def _residuals(pose: RigidTransform, world, obs_px, intr):
    cam = apply(pose, world)
    pred = np.column_stack([intr.fx * cam[:, 0] / cam[:, 2] + intr.cx,
                            intr.fy * cam[:, 1] / cam[:, 2] + intr.cy])
    return pred - obs_px, cam


def _refine(pose: RigidTransform, world, obs_px, intr) -> RigidTransform:
    """Gauss-Newton on undistorted-pixel reprojection error.

    Updates are left-multiplied twists: ``R <- exp(w) R``, ``t <- exp(w) t + v``.
    """
    r, cam = _residuals(pose, world, obs_px, intr)
    cost = float(np.sum(r**2))
    n = len(world)
    for _ in range(PNP_MAX_ITER):
        X, Y, Z = cam[:, 0], cam[:, 1], cam[:, 2]
        dproj = np.zeros((n, 2, 3))
        dproj[:, 0, 0] = intr.fx / Z
        dproj[:, 0, 2] = -intr.fx * X / Z**2
        dproj[:, 1, 1] = intr.fy / Z
        dproj[:, 1, 2] = -intr.fy * Y / Z**2
        dcam = np.zeros((n, 3, 6))
        dcam[:, :, :3] = -np.stack([hat(c) for c in cam])
        dcam[:, :, 3:] = np.eye(3)
        J = np.einsum("nij,njk->nik", dproj, dcam).reshape(2 * n, 6)
        step = -np.linalg.lstsq(J, r.reshape(2 * n), rcond=None)[0]
        accepted = False
        for _ in range(20):
            dR = rotvec_to_matrix(step[:3])
            cand = RigidTransform(dR @ pose.rotation, dR @ pose.translation + step[3:])
            cr, ccam = _residuals(cand, world, obs_px, intr)
            if np.all(ccam[:, 2] > 0):
                ccost = float(np.sum(cr**2))
                if ccost <= cost:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        pose, r, cam, cost = cand, cr, ccam, ccost
        if np.linalg.norm(step) < PNP_STEP_TOL:
            break
    return pose


def solve_pnp_arrays(world, image_px, intr: CameraIntrinsics) -> PnPResult:
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    image_px = np.asarray(image_px, dtype=float).reshape(-1, 2)
    n = len(world)
    if n < PNP_MIN_POINTS:
        raise InsufficientPoints(f"PnP needs >= {PNP_MIN_POINTS} correspondences, got {n}")
    centroid = world.mean(axis=0)
    _, s, vt = np.linalg.svd(world - centroid, full_matrices=False)
    if s[1] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("world points are collinear")
    xn = undistort(intr, image_px)
    diameter = 2.0 * np.sqrt(np.max(np.sum((world - centroid) ** 2, axis=1)))
    plane_rms = s[2] / np.sqrt(n) if len(s) > 2 else 0.0
    if plane_rms < PLANAR_RATIO * diameter:
        init = _planar_init(world, xn, centroid, vt)
    else:
        init = _dlt_init(world, xn)
    obs_px = normalized_to_pixel(intr, xn)
    pose = _refine(init, world, obs_px, intr)
    r, _ = _residuals(pose, world, obs_px, intr)
    per_point = np.linalg.norm(r, axis=1)
    return PnPResult(pose, float(np.sqrt(np.mean(per_point**2))), per_point)


def solve_pnp(corrs: list[Correspondence2D3D], intr: CameraIntrinsics) -> PnPResult:
    """Camera extrinsics (world -> camera) from 2D-3D correspondences.

    Residuals are measured in undistorted pixel coordinates.
    """
    ids = [c.id for c in corrs]
    if len(set(ids)) != len(ids):
        raise ValueError("correspondence ids must be unique")
    if len(corrs) < PNP_MIN_POINTS:
        raise InsufficientPoints(f"PnP needs >= {PNP_MIN_POINTS} correspondences, got {len(corrs)}")
    world = np.stack([c.world_point for c in corrs])
    px = np.stack([c.image_point for c in corrs])
    return solve_pnp_arrays(world, px, intr)


# ---------------------------------------------------------------------------
# hand-eye

@dataclass
class HandEyeFrame:
    correspondences: list[Correspondence2D3D]
    marker_pose: RigidTransform  # world -> marker

    def to_record(self) -> dict:
        return {"marker_pose": self.marker_pose.to_record(),
                "correspondences": [c.to_record() for c in self.correspondences]}

    @classmethod
    def from_record(cls, rec: dict) -> "HandEyeFrame":
        return cls([Correspondence2D3D.from_record(c) for c in rec["correspondences"]],
                   RigidTransform.from_record(rec["marker_pose"]))


@dataclass
class HandEyeResult:
    d_rc: RigidTransform
    selected_frame: int
    per_frame_reproj_rms: list[float]
    mean_reproj: float
    std_reproj: float
    candidates: list = field(default_factory=list, repr=False)
    frame_errors: dict = field(default_factory=dict, repr=False)

    def to_record(self) -> dict:
        return {"d_rc": self.d_rc.to_record(), "selected_frame": self.selected_frame,
                "per_frame_reproj_rms": [float(v) for v in self.per_frame_reproj_rms],
                "mean_reproj": self.mean_reproj, "std_reproj": self.std_reproj}

    @classmethod
    def from_record(cls, rec: dict) -> "HandEyeResult":
        return cls(RigidTransform.from_record(rec["d_rc"]), int(rec["selected_frame"]),
                   [float(v) for v in rec["per_frame_reproj_rms"]],
                   float(rec["mean_reproj"]), float(rec["std_reproj"]))


def _frame_rms(extrinsics: RigidTransform, frame: HandEyeFrame, intr) -> float:
    world = np.stack([c.world_point for c in frame.correspondences])
    px = np.stack([c.image_point for c in frame.correspondences])
    obs = normalized_to_pixel(intr, undistort(intr, px))
    r, cam = _residuals(extrinsics, world, obs, intr)
    if np.any(cam[:, 2] <= 0):
        return np.inf
    return float(np.sqrt(np.mean(np.sum(r**2, axis=1))))


def hand_eye_calibrate(frames, intr: CameraIntrinsics, threads: int = 1) -> HandEyeResult:
    """Marker -> camera transform, best of the per-frame candidates.

    Every frame with a PnP solution yields a candidate ``D = E . marker^-1``.
    Each candidate predicts the extrinsics of all frames as ``D . marker_j``
    and is scored by the mean over frames of the per-frame reprojection RMS.
    """
    frames = [f if isinstance(f, HandEyeFrame) else HandEyeFrame(*f) for f in frames]
    if not frames:
        raise AllFramesFailed("no frames given")

    def _solve(frame):
        try:
            return solve_pnp(frame.correspondences, intr)
        except (CalibrationError, PointBehindCamera, ValueError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            solved = list(pool.map(_solve, frames))
    else:
        solved = [_solve(f) for f in frames]

    errors, candidates = {}, []
    for i, (frame, res) in enumerate(zip(frames, solved)):
        if isinstance(res, Exception):
            log.warning("frame %d: PnP failed: %s", i, res)
            errors[i] = res
            continue
        candidates.append((i, res.pose @ invert(frame.marker_pose)))
    if not candidates:
        raise AllFramesFailed(f"PnP failed on all {len(frames)} frames")

    table = np.array([[_frame_rms(D @ f.marker_pose, f, intr) for f in frames]
                      for _, D in candidates])
    k = select_candidate(table)
    i, D = candidates[k]
    rms = table[k].tolist()
    return HandEyeResult(D, i, rms, float(np.mean(rms)), float(np.std(rms)), candidates, errors)


def select_candidate(rms_table) -> int:
    """Row with the least mean per-frame RMS; ties go to the earliest row."""
    scores = np.mean(np.asarray(rms_table, dtype=float), axis=1)
    return int(np.argmin(scores))


def reproject_measured(p_world, d_rc: RigidTransform, marker_pose: RigidTransform,
                       intr: CameraIntrinsics) -> np.ndarray:
    """Pixel location of a tracker-measured point, through ``D . marker_pose``."""
    return project(intr, d_rc @ marker_pose, p_world)


def measured_point_in_camera(p_world, d_rc: RigidTransform, marker_pose: RigidTransform):
    return apply(d_rc @ marker_pose, p_world)
