"""Synthetic ground truth for both depth pipelines.

The world frame is the tracker frame. The annulus phantom sits at the
world origin; the calibration board lies in the world z = 0 plane. The
endoscope carries a rigid marker, so every camera pose is
``E = D . marker_pose`` with a fixed marker -> camera transform ``D``.

All randomness comes from one ``numpy.random.Generator`` seeded with
``SceneConfig.seed`` (PCG64 bit generator), consumed in a fixed order.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .calibration import Correspondence2D3D, HandEyeFrame
from .camera import CameraIntrinsics, StereoRig, project
from .rigid import RigidTransform, invert, rotvec_to_matrix


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class Unviewable(ValueError):
    pass


@dataclass
class AnnulusConfig:
    a: float = 17.0
    b: float = 14.0
    h: float = 5.0


@dataclass
class RigConfig:
    fx: float = 1100.0
    fy: float = 1100.0
    cx: float = 960.0
    cy: float = 540.0
    width: int = 1920
    height: int = 1080
    dist: list = field(default_factory=lambda: [-0.12, 0.03, 4e-4, -3e-4, 0.0])
    baseline: float = 4.0


@dataclass
class NoiseConfig:
    px_sigma: float = 1.0         # per image axis
    marker_t_sigma: float = 0.1   # RMS length of the 3D translation error, mm
    marker_r_sigma: float = 0.05  # rotation angle std, degrees


@dataclass
class DetectorConfig:
    miss_prob: float = 0.1
    n_false_positives: int = 2


@dataclass
class SceneConfig:
    seed: int = 0
    n_points: int = 12
    annulus: AnnulusConfig = field(default_factory=AnnulusConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    n_handeye_frames: int = 3
    n_pivot_poses: int = 500
    n_eval_frames: int = 10
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tip_offset: list = field(default_factory=lambda: [0.0, 0.0, -150.0])
    pivot_coverage_deg: list = field(default_factory=lambda: [60.0, 55.0])
    board_shape: list = field(default_factory=lambda: [10, 5])
    board_spacing: float = 5.0
    working_distance: float = 70.0
    view_cone_deg: float = 20.0
    image_margin_px: float = 20.0

    def validate(self) -> "SceneConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(isinstance(self.n_points, int) and self.n_points >= 2, "n_points", "must be an integer >= 2")
        for k in ("a", "b"):
            need(getattr(self.annulus, k) > 0, f"annulus.{k}", "semi-axes must be positive")
        need(np.isfinite(self.annulus.h), "annulus.h", "must be finite")
        for k in ("px_sigma", "marker_t_sigma", "marker_r_sigma"):
            need(getattr(self.noise, k) >= 0, f"noise.{k}", "sigmas must be >= 0")
        need(self.rig.fx > 0 and self.rig.fy > 0, "rig.fx", "focal lengths must be positive")
        need(len(self.rig.dist) == 5, "rig.dist", "expects [k1, k2, p1, p2, k3]")
        need(self.rig.baseline > 0, "rig.baseline", "must be positive")
        need(self.n_handeye_frames >= 1, "n_handeye_frames", "must be >= 1")
        need(self.n_pivot_poses >= 10, "n_pivot_poses", "must be >= 10")
        need(self.n_eval_frames >= 1, "n_eval_frames", "must be >= 1")
        need(0 <= self.detector.miss_prob < 1, "detector.miss_prob", "must be in [0, 1)")
        need(self.detector.n_false_positives >= 0, "detector.n_false_positives", "must be >= 0")
        need(len(self.board_shape) == 2 and min(self.board_shape) >= 2
             and self.board_shape[0] * self.board_shape[1] >= 6, "board_shape", "needs >= 6 points")
        need(self.working_distance > 0, "working_distance", "must be positive")
        need(len(self.tip_offset) == 3, "tip_offset", "must have 3 components")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        nested = {"annulus": AnnulusConfig, "rig": RigConfig, "noise": NoiseConfig,
                  "detector": DetectorConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in d.items():
            if key not in known:
                raise ConfigError(key, "unknown field")
            if key in nested:
                sub = nested[key]
                subknown = {f.name for f in dataclasses.fields(sub)}
                if not isinstance(val, dict):
                    raise ConfigError(key, "must be an object")
                for k in val:
                    if k not in subknown:
                        raise ConfigError(f"{key}.{k}", "unknown field")
                kwargs[key] = sub(**val)
            else:
                kwargs[key] = val
        try:
            cfg = cls(**kwargs)
            return cfg.validate()
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SceneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_rig(self) -> StereoRig:
        r = self.rig
        k1, k2, p1, p2, k3 = r.dist
        intr = CameraIntrinsics(r.fx, r.fy, r.cx, r.cy, k1, k2, p1, p2, k3, (r.width, r.height))
        # parallel optical axes; the right camera sits +baseline along left x
        return StereoRig(intr, intr, RigidTransform(np.eye(3), [-r.baseline, 0.0, 0.0],
                                                    "camera-left", "camera-right"))


# ---------------------------------------------------------------------------
# annulus

def _saddle(theta, a, b, h):
    return np.column_stack([a * np.cos(theta), b * np.sin(theta), h * np.cos(2 * theta)])


def _saddle_speed(theta, a, b, h):
    return np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2
                   + (2 * h * np.sin(2 * theta)) ** 2)


def _arc(t0, t1, a, b, h):
    return quad(_saddle_speed, t0, t1, args=(a, b, h), epsabs=1e-13, epsrel=1e-13, limit=400)[0]


def annulus_length(a, b, h) -> float:
    # split at quarter turns so each piece is smooth and short
    return sum(_arc(k * np.pi / 2, (k + 1) * np.pi / 2, a, b, h) for k in range(4))


def generate_annulus(n: int, a: float, b: float, h: float) -> np.ndarray:
    """``n`` points equally spaced in arc length on the saddle curve
    ``(a cos t, b sin t, h cos 2t)``, starting at ``t = 0``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    total = annulus_length(a, b, h)
    thetas = [0.0]
    for k in range(1, n):
        target = k * total / n
        prev = thetas[-1]
        seg = target - (k - 1) * total / n
        # bracket from the previous point; speed >= min(a, b) > 0 bounds the step
        hi = min(prev + seg / min(a, b) * 1.000001 + 1e-12, 2 * np.pi)
        f = lambda t: _arc(prev, t, a, b, h) - seg  # noqa: E731
        thetas.append(brentq(f, prev, hi, xtol=1e-15, rtol=1e-15, maxiter=200))
    return _saddle(np.array(thetas), a, b, h)


# ---------------------------------------------------------------------------
# poses

def _look_at(eye, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World -> camera pose for a camera at ``eye`` looking at ``target``."""
    z = np.asarray(target, float) - np.asarray(eye, float)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, float), z)
    if np.linalg.norm(x) < 1e-6:
        x = np.cross([1.0, 0.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return RigidTransform(R, -R @ np.asarray(eye, float), "world", "camera-left")


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _direction_in_cone(rng, axis, half_angle_rad) -> np.ndarray:
    # uniform on the spherical cap around axis
    cos_max = np.cos(half_angle_rad)
    c = rng.uniform(cos_max, 1.0)
    phi = rng.uniform(0, 2 * np.pi)
    s = np.sqrt(max(0.0, 1 - c * c))
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    tmp = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(axis, tmp)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return c * axis + s * (np.cos(phi) * e1 + np.sin(phi) * e2)


def perturb_pose(rng, pose: RigidTransform, t_sigma: float, r_sigma_deg: float) -> RigidTransform:
    """Tracker noise: random-axis rotation of N(0, r_sigma) degrees composed on
    the right, plus an isotropic translation error whose 3D RMS length is
    ``t_sigma`` (per-axis std ``t_sigma / sqrt(3)``)."""
    axis = _random_unit(rng)
    angle = np.radians(rng.normal(0.0, r_sigma_deg)) if r_sigma_deg > 0 else 0.0
    dt = rng.normal(0.0, t_sigma / np.sqrt(3.0), size=3) if t_sigma > 0 else np.zeros(3)
    noisy = pose @ RigidTransform(rotvec_to_matrix(axis * angle), np.zeros(3),
                                  pose.source, pose.source)
    return RigidTransform(noisy.rotation, noisy.translation + dt, pose.source, pose.target)


def _axis_frame(u, roll) -> np.ndarray:
    """Rotation whose third column is ``u``, rolled by ``roll`` about it."""
    u = u / np.linalg.norm(u)
    tmp = np.array([1.0, 0, 0]) if abs(u[0]) < 0.9 else np.array([0, 1.0, 0])
    x = np.cross(tmp, u)
    x /= np.linalg.norm(x)
    y = np.cross(u, x)
    c, s = np.cos(roll), np.sin(roll)
    return np.column_stack([c * x + s * y, -s * x + c * y, u])


def pivot_poses(rng, n, tip, pivot_point, coverage_deg) -> list[RigidTransform]:
    """Marker -> world poses pivoting about ``pivot_point``.

    The stylus axis (marker +z) spans ``coverage_deg`` full angle along world
    x and y about world +z.
    """
    half = np.radians(np.asarray(coverage_deg, float)) / 2
    poses = []
    for _ in range(n):
        ax, ay = rng.uniform(-half[0], half[0]), rng.uniform(-half[1], half[1])
        u = np.array([np.tan(ax), np.tan(ay), 1.0])
        R = _axis_frame(u, rng.uniform(0, 2 * np.pi))
        poses.append(RigidTransform(R, pivot_point - R @ tip, "marker", "world"))
    return poses


# ---------------------------------------------------------------------------
# scene

@dataclass
class SyntheticScene:
    config: SceneConfig
    rig: StereoRig
    annulus: np.ndarray          # (n, 3) world mm
    board: np.ndarray            # (m, 3) world mm
    tip_offset: np.ndarray
    pivot_point: np.ndarray
    d_rc: RigidTransform         # marker -> camera-left
    handeye_camera_poses: list   # world -> camera-left
    handeye_marker_poses: list   # world -> marker
    eval_camera_poses: list
    eval_marker_poses: list
    caliper: list                # [((i, j), mm)]
    clean: dict                  # noise-free observations
    noisy: dict                  # observations with configured noise

    def truth_record(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rig": self.rig.to_record(),
            "annulus_world_mm": self.annulus.tolist(),
            "board_world_mm": self.board.tolist(),
            "tip_offset": self.tip_offset.tolist(),
            "pivot_point": self.pivot_point.tolist(),
            "d_rc": self.d_rc.to_record(),
            "handeye_camera_poses": [p.to_record() for p in self.handeye_camera_poses],
            "handeye_marker_poses": [p.to_record() for p in self.handeye_marker_poses],
            "eval_frames": [
                {"frame_id": f, "camera_pose": e.to_record(), "marker_pose": m.to_record(),
                 "points_camera_left_mm": [[float(v) for v in p] for p in (e @ self.annulus)]}
                for f, (e, m) in enumerate(zip(self.eval_camera_poses, self.eval_marker_poses))
            ],
            "caliper": caliper_records(self.caliper),
        }


def caliper_records(caliper) -> list:
    return [{"ids": [int(i), int(j)], "distance_mm": float(d)} for (i, j), d in caliper]


def _check_visible(rig: StereoRig, pose, pts, margin, what):
    for side, intr, p in (("left", rig.left, pose), ("right", rig.right, rig.right_pose(pose))):
        cam = p @ pts
        w, h = intr.image_size
        if np.any(cam[:, 2] <= 0):
            raise Unviewable(f"{what}: point behind the {side} camera")
        px = project(intr, p, pts)
        inside = ((px[:, 0] >= margin) & (px[:, 0] <= w - margin)
                  & (px[:, 1] >= margin) & (px[:, 1] <= h - margin))
        if not inside.all():
            raise Unviewable(f"{what}: point(s) {np.flatnonzero(~inside).tolist()} "
                             f"outside the {side} image")


def _view_pose(rng, cfg: SceneConfig, target) -> RigidTransform:
    d = _direction_in_cone(rng, [0.0, 0.0, 1.0], np.radians(cfg.view_cone_deg))
    dist = cfg.working_distance * rng.uniform(0.9, 1.1)
    eye = np.asarray(target) + dist * d
    E = _look_at(eye, target)
    roll = rng.uniform(-np.pi, np.pi)
    Rz = rotvec_to_matrix([0.0, 0.0, roll])
    return RigidTransform(Rz @ E.rotation, Rz @ E.translation, "world", "camera-left")


def _detections(rng, intr, px_true, sigma, ids):
    """Noisy copies of in-image projections; points that leave the image are dropped."""
    noisy = px_true + (rng.normal(0.0, sigma, size=px_true.shape) if sigma > 0 else 0.0)
    keep = intr.in_image(noisy)
    return [(int(i), p) for i, p, k in zip(ids, noisy, keep) if k]


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    rig = cfg.make_rig()
    noise = cfg.noise

    annulus = generate_annulus(cfg.n_points, cfg.annulus.a, cfg.annulus.b, cfg.annulus.h)
    cols, rows = cfg.board_shape
    gx, gy = np.meshgrid((np.arange(cols) - (cols - 1) / 2) * cfg.board_spacing,
                         (np.arange(rows) - (rows - 1) / 2) * cfg.board_spacing)
    board = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    tip = np.asarray(cfg.tip_offset, float)
    pivot_point = np.array([60.0, -40.0, 0.0])
    # marker on the scope shaft, behind and above the camera
    d_rc = RigidTransform(rotvec_to_matrix(_random_unit(rng) * np.radians(rng.uniform(5, 20))),
                          [rng.uniform(-10, 10), rng.uniform(20, 40), rng.uniform(-220, -180)],
                          "marker", "camera-left")
    d_inv = invert(d_rc)

    he_cam, he_marker = [], []
    for k in range(cfg.n_handeye_frames):
        E = _view_pose(rng, cfg, [0.0, 0.0, 0.0])
        _check_visible(rig, E, board, cfg.image_margin_px, f"hand-eye frame {k}")
        he_cam.append(E)
        he_marker.append(d_inv @ E)
    ev_cam, ev_marker = [], []
    for k in range(cfg.n_eval_frames):
        E = _view_pose(rng, cfg, [0.0, 0.0, 0.0])
        _check_visible(rig, E, annulus, cfg.image_margin_px, f"evaluation frame {k}")
        ev_cam.append(E)
        ev_marker.append(d_inv @ E)

    piv = pivot_poses(rng, cfg.n_pivot_poses, tip, pivot_point, cfg.pivot_coverage_deg)
    stylus = []
    for p in annulus:
        u = _direction_in_cone(rng, [0.0, 0.0, 1.0], np.radians(30.0))
        R = _axis_frame(u, rng.uniform(0, 2 * np.pi))
        stylus.append(RigidTransform(R, p - R @ tip, "marker", "world"))

    caliper = [((i, (i + 1) % cfg.n_points),
                float(np.linalg.norm(annulus[(i + 1) % cfg.n_points] - annulus[i])))
               for i in range(cfg.n_points)]

    ids = np.arange(cfg.n_points)
    board_ids = np.arange(len(board))
    clean = {"pivot": piv, "stylus": stylus, "tracking": ev_marker, "handeye": [],
             "detections": {"gt": [], "model": []}}
    for E, M in zip(he_cam, he_marker):
        px = project(rig.left, E, board)
        clean["handeye"].append(HandEyeFrame(
            [Correspondence2D3D(p, w, int(i)) for p, w, i in zip(px, board, board_ids)], M))
    true_px = []
    for f, E in enumerate(ev_cam):
        per_side = {"left": project(rig.left, E, annulus),
                    "right": project(rig.right, rig.right_pose(E), annulus)}
        true_px.append(per_side)
        for side, px in per_side.items():
            pts = [(int(i), p) for i, p in zip(ids, px)]
            clean["detections"]["gt"].append({"frame_id": f, "side": side, "points": pts})
            clean["detections"]["model"].append({"frame_id": f, "side": side, "points": pts})

    # noisy variant; stream order: pivot, stylus, tracking, hand-eye, detections
    def tracker(p):
        return perturb_pose(rng, p, noise.marker_t_sigma, noise.marker_r_sigma)

    noisy = {"pivot": [tracker(p) for p in piv], "stylus": [tracker(p) for p in stylus],
             "tracking": [tracker(m) for m in ev_marker], "handeye": [],
             "detections": {"gt": [], "model": []}}
    for fr in clean["handeye"]:
        px = np.stack([c.image_point for c in fr.correspondences])
        kept = _detections(rng, rig.left, px, noise.px_sigma, board_ids)
        noisy["handeye"].append(HandEyeFrame(
            [Correspondence2D3D(p, board[i], i) for i, p in kept], tracker(fr.marker_pose)))
    for f, per_side in enumerate(true_px):
        for side in ("left", "right"):
            intr = rig.left if side == "left" else rig.right
            px = per_side[side]
            gt = _detections(rng, intr, px, noise.px_sigma, ids)
            noisy["detections"]["gt"].append({"frame_id": f, "side": side, "points": gt})
            model = _detections(rng, intr, px, noise.px_sigma, ids)
            hit = rng.uniform(size=len(model)) >= cfg.detector.miss_prob
            model = [m for m, k in zip(model, hit) if k]
            w, h = intr.image_size
            fps = np.column_stack([rng.uniform(0, w, cfg.detector.n_false_positives),
                                   rng.uniform(0, h, cfg.detector.n_false_positives)])
            # model outputs carry no identity
            pts = [(None, p) for _, p in model] + [(None, p) for p in fps]
            noisy["detections"]["model"].append({"frame_id": f, "side": side, "points": pts})

    return SyntheticScene(cfg, rig, annulus, board, tip, pivot_point, d_rc, he_cam, he_marker,
                          ev_cam, ev_marker, caliper, clean, noisy)


# ---------------------------------------------------------------------------
# files

def detection_records(dets: list, source: str) -> list:
    out = []
    for d in dets:
        pts = []
        for pid, p in d["points"]:
            rec = {"px": [float(p[0]), float(p[1])]}
            if pid is not None:
                rec["id"] = int(pid)
            pts.append(rec)
        out.append({"frame_id": int(d["frame_id"]), "side": d["side"], "source": source,
                    "points": pts})
    return out


def observation_files(obs: dict, rig: StereoRig, caliper) -> dict:
    return {
        "rig.json": rig.to_record(),
        "intrinsics_left.json": rig.left.to_record(),
        "pivot_poses.json": [p.to_record() for p in obs["pivot"]],
        "handeye_session.json": [f.to_record() for f in obs["handeye"]],
        "detections_gt.json": detection_records(obs["detections"]["gt"], "gt"),
        "detections_model.json": detection_records(obs["detections"]["model"], "model"),
        "measurements.json": [{"id": i, "stylus_pose": p.to_record()}
                              for i, p in enumerate(obs["stylus"])],
        "tracking.json": [{"frame_id": f, "marker_pose": m.to_record()}
                          for f, m in enumerate(obs["tracking"])],
        "caliper.json": caliper_records(caliper),
    }


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_scene(scene: SyntheticScene, out_dir) -> list[Path]:
    """Noisy observations at the top level, noise-free copies under ``noise_free/``."""
    out = Path(out_dir)
    written = []
    for sub, obs in (("", scene.noisy), ("noise_free", scene.clean)):
        d = out / sub
        d.mkdir(parents=True, exist_ok=True)
        for name, rec in observation_files(obs, scene.rig, scene.caliper).items():
            dump_json(rec, d / name)
            written.append(d / name)
    dump_json(scene.truth_record(), out / "truth.json")
    written.append(out / "truth.json")
    return written
