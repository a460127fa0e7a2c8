"""Pinhole camera with Brown-Conrady distortion and a calibrated stereo pair.

Pixel coordinates follow the usual vision convention: +u right, +v down,
camera looks along +z. Distortion uses five coefficients, stored in the
file order ``[k1, k2, p1, p2, k3]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rigid import RigidTransform, apply

CameraPose = RigidTransform  # world -> camera extrinsics

UNDISTORT_MAX_ITER = 50
UNDISTORT_TOL = 1e-13  # normalized units; ~1e-10 px at endoscope focal lengths


class PointBehindCamera(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0
    image_size: tuple[int, int] = (1920, 1080)

    def __post_init__(self):
        w, h = self.image_size
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if not (0 <= self.cx <= w and 0 <= self.cy <= h):
            raise ValueError("principal point outside the image")
        if not np.all(np.isfinite(self.dist)):
            raise ValueError("distortion coefficients must be finite")
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def dist(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.dist != 0))

    def in_image(self, px) -> np.ndarray:
        px = np.atleast_2d(px)
        w, h = self.image_size
        return (px[:, 0] >= 0) & (px[:, 0] <= w) & (px[:, 1] >= 0) & (px[:, 1] <= h)

    def to_record(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "dist": [float(v) for v in self.dist],
                "image_size": list(self.image_size)}

    @classmethod
    def from_record(cls, rec: dict) -> "CameraIntrinsics":
        dist = list(rec.get("dist", [0, 0, 0, 0, 0]))
        if len(dist) != 5:
            raise ValueError("'dist' must list exactly [k1, k2, p1, p2, k3]")
        k1, k2, p1, p2, k3 = (float(v) for v in dist)
        return cls(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
                   k1, k2, p1, p2, k3, tuple(rec["image_size"]))


@dataclass(frozen=True)
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    left_to_right: RigidTransform  # left-camera coords -> right-camera coords

    def __post_init__(self):
        if not np.linalg.norm(self.left_to_right.translation) > 0:
            raise ValueError("stereo baseline must be non-zero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.left_to_right.translation))

    def right_pose(self, left_pose: RigidTransform) -> RigidTransform:
        return self.left_to_right @ left_pose

    def to_record(self) -> dict:
        return {"left": self.left.to_record(), "right": self.right.to_record(),
                "left_to_right": self.left_to_right.to_record()}

    @classmethod
    def from_record(cls, rec: dict) -> "StereoRig":
        return cls(CameraIntrinsics.from_record(rec["left"]),
                   CameraIntrinsics.from_record(rec["right"]),
                   RigidTransform.from_record(rec["left_to_right"]))


def distort(intr: CameraIntrinsics, xy) -> np.ndarray:
    """Apply lens distortion to normalized image coordinates, shape (N, 2)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    return np.column_stack([xd, yd])


def _distort_jacobian(intr: CameraIntrinsics, xy):
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    drad = intr.k1 + r2 * (2.0 * intr.k2 + 3.0 * intr.k3 * r2)
    J = np.empty((len(x), 2, 2))
    J[:, 0, 0] = radial + 2.0 * x * x * drad + 2.0 * intr.p1 * y + 6.0 * intr.p2 * x
    J[:, 0, 1] = 2.0 * x * y * drad + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y
    J[:, 1, 0] = 2.0 * x * y * drad + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y
    J[:, 1, 1] = radial + 2.0 * y * y * drad + 6.0 * intr.p1 * y + 2.0 * intr.p2 * x
    return J


def pixel_to_distorted(intr: CameraIntrinsics, px) -> np.ndarray:
    px = np.atleast_2d(np.asarray(px, dtype=float))
    return np.column_stack([(px[:, 0] - intr.cx) / intr.fx, (px[:, 1] - intr.cy) / intr.fy])


def normalized_to_pixel(intr: CameraIntrinsics, xy) -> np.ndarray:
    xy = np.atleast_2d(xy)
    return np.column_stack([intr.fx * xy[:, 0] + intr.cx, intr.fy * xy[:, 1] + intr.cy])


def undistort(intr: CameraIntrinsics, px) -> np.ndarray:
    """Pixel coordinates -> undistorted normalized coordinates, shape (N, 2).

    Newton iteration on ``distort(x) = x_d`` starting from the distorted
    point, with step halving whenever the residual grows.
    """
    target = pixel_to_distorted(intr, px)
    if not np.all(np.isfinite(target)):
        raise ValueError("pixel coordinates must be finite")
    if not intr.has_distortion:
        return target
    x = target.copy()
    res = distort(intr, x) - target
    for _ in range(UNDISTORT_MAX_ITER):
        err = np.abs(res).max(axis=1)
        active = err > UNDISTORT_TOL
        if not active.any():
            return x
        J = _distort_jacobian(intr, x[active])
        step = np.linalg.solve(J, res[active][:, :, None])[:, :, 0]
        cand = x[active] - step
        cres = distort(intr, cand) - target[active]
        for _ in range(30):
            worse = np.abs(cres).max(axis=1) > err[active]
            if not worse.any():
                break
            step[worse] *= 0.5
            cand[worse] = x[active][worse] - step[worse]
            cres[worse] = distort(intr, cand[worse]) - target[active][worse]
        x[active] = cand
        res[active] = cres
    if np.abs(res).max() > UNDISTORT_TOL:
        raise NoConvergence(f"undistortion did not converge in {UNDISTORT_MAX_ITER} iterations")
    return x


def project_camera(intr: CameraIntrinsics, pts_cam) -> np.ndarray:
    """Project camera-frame points to pixels, shape (N, 2)."""
    pts_cam = np.atleast_2d(np.asarray(pts_cam, dtype=float))
    z = pts_cam[:, 2]
    if np.any(z <= 0):
        bad = np.flatnonzero(z <= 0).tolist()
        raise PointBehindCamera(f"points {bad} have non-positive camera depth")
    xy = pts_cam[:, :2] / z[:, None]
    return normalized_to_pixel(intr, distort(intr, xy))


def project(intr: CameraIntrinsics, pose: CameraPose, pts_world) -> np.ndarray:
    return project_camera(intr, apply(pose, pts_world))


def projection_matrix(intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """``K [R | t]``; distortion is not representable here."""
    return intr.K @ np.hstack([pose.rotation, pose.translation[:, None]])


def undistorted_pixels(intr: CameraIntrinsics, px) -> np.ndarray:
    """Observed pixels mapped into the ideal (distortion-free) pinhole image."""
    return normalized_to_pixel(intr, undistort(intr, px))
