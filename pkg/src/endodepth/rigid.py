"""Rigid motions in 3D.

A :class:`RigidTransform` maps points from a ``source`` frame into a
``target`` frame as ``x' = R x + t``. Frame names are optional metadata;
when both operands of :func:`compose` carry them they must chain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

FRAMES = ("world", "camera-left", "camera-right", "marker")


class FrameMismatch(ValueError):
    pass


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (SVD, sign-corrected)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotvec_to_matrix(w) -> np.ndarray:
    """Rodrigues' formula; exact to machine precision near zero."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        # Taylor expansion of sin(x)/x and (1-cos x)/x^2
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


@dataclass(frozen=True)
class Point3D:
    """A 3-vector in millimetres tagged with the frame it is expressed in."""

    xyz: np.ndarray
    frame: str | None = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=float).reshape(3)
        if not np.all(np.isfinite(xyz)):
            raise ValueError("Point3D components must be finite")
        object.__setattr__(self, "xyz", xyz)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source: str | None = None
    target: str | None = None

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform entries must be finite")
        # tracked poses carry rounding drift; only re-project when needed
        if (np.abs(R.T @ R - np.eye(3)).max() > 1e-12
                or abs(np.linalg.det(R) - 1.0) > 1e-12):
            R = nearest_rotation(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, source=None, target=None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), source, target)

    @classmethod
    def from_matrix(cls, m, source=None, target=None) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3], source, target)

    @classmethod
    def from_quaternion(cls, q, translation=(0, 0, 0), source=None, target=None):
        """``q`` is scalar-last (x, y, z, w)."""
        return cls(Rotation.from_quat(q).as_matrix(), translation, source, target)

    @classmethod
    def from_rotvec(cls, w, translation=(0, 0, 0), source=None, target=None):
        return cls(rotvec_to_matrix(w), translation, source, target)

    def as_quaternion(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_quat()

    def as_rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return compose(self, other)
        return apply(self, other)

    def inv(self) -> "RigidTransform":
        return invert(self)

    def allclose(self, other: "RigidTransform", atol=1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def to_record(self) -> dict:
        rec = {"rotation": [float(v) for v in self.rotation.ravel()],
               "translation_mm": [float(v) for v in self.translation]}
        if self.source is not None or self.target is not None:
            rec["frame"] = f"{self.source or ''}->{self.target or ''}"
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RigidTransform":
        rot = np.asarray(rec["rotation"], dtype=float)
        if rot.size != 9:
            raise ValueError("pose 'rotation' needs 9 numbers (row-major)")
        trans = np.asarray(rec["translation_mm"], dtype=float)
        if trans.size != 3:
            raise ValueError("pose 'translation_mm' needs 3 numbers")
        source = target = None
        frame = rec.get("frame")
        if frame and "->" in frame:
            s, d = frame.split("->", 1)
            source, target = s or None, d or None
        return cls(rot.reshape(3, 3), trans, source, target)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a . b``: apply ``b`` first, then ``a``."""
    if a.source is not None and b.target is not None and a.source != b.target:
        raise FrameMismatch(f"cannot compose {b.source}->{b.target} into {a.source}->{a.target}")
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation,
                          b.source, a.target)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation, t.target, t.source)


def apply(t: RigidTransform, p):
    """Map a point (or an (N, 3) array of points) through ``t``.

    A :class:`Point3D` input is checked against ``t.source`` and comes back
    tagged with ``t.target``.
    """
    if isinstance(p, Point3D):
        if p.frame is not None and t.source is not None and p.frame != t.source:
            raise FrameMismatch(f"point in {p.frame!r}, transform expects {t.source!r}")
        return Point3D(t.rotation @ p.xyz + t.translation, t.target)
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T + t.translation
