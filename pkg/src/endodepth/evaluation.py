"""Error statistics comparing tracker-based and image-based measurements.

Inputs are keyed by ``(frame, id)``. Only keys present in both operands of
a comparison are evaluated; the rest are counted as excluded. Standard
deviations are population (1/n). Samples are summed in sorted key order so
results are independent of input ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rigid import Point3D


class EvaluationError(ValueError):
    pass


class EmptyIntersection(EvaluationError):
    pass


class FrameMismatch(EvaluationError):
    pass


class MissingNeighbor(EvaluationError):
    pass


@dataclass
class ErrorStats:
    mean: float
    std: float
    n: int
    unit: str
    samples: list = field(default_factory=list)  # [(key, error)], sorted by key
    excluded: int = 0  # keys present on one side only, or skipped pairs

    @classmethod
    def from_samples(cls, samples, unit: str, excluded: int = 0) -> "ErrorStats":
        samples = sorted(samples, key=lambda s: s[0])
        if not samples:
            raise EmptyIntersection("no samples to summarise")
        vals = [float(v) for _, v in samples]
        mean = math.fsum(vals) / len(vals)
        var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
        return cls(mean, math.sqrt(var), len(vals), unit, samples, excluded)

    def format(self) -> str:
        return f"{self.mean:.2f}±{self.std:.2f}"

    def to_record(self, audit: bool = True) -> dict:
        rec = {"mean": self.mean, "std": self.std, "n": self.n, "unit": self.unit,
               "excluded": self.excluded}
        if audit:
            rec["audit"] = [{"key": list(k) if isinstance(k, tuple) else k, "error": float(v)}
                            for k, v in self.samples]
        return rec


def _keyed(items) -> dict:
    out = {}
    for frame, pid, p in items:
        key = (frame, pid)
        if key in out:
            raise EvaluationError(f"duplicate key {key}")
        out[key] = p
    return out


def _pair(a, b):
    da, db = _keyed(a), _keyed(b)
    shared = sorted(da.keys() & db.keys())
    excluded = len(da.keys() ^ db.keys())
    if not shared:
        raise EmptyIntersection("no (frame, id) keys shared by both sources")
    return da, db, shared, excluded


def error_2d(a, b) -> ErrorStats:
    """Pixel distance per shared (frame, id) key."""
    da, db, shared, excluded = _pair(a, b)
    samples = [(k, float(np.linalg.norm(np.asarray(da[k], float) - np.asarray(db[k], float))))
               for k in shared]
    return ErrorStats.from_samples(samples, "px", excluded)


def _xyz(p, expected="camera-left"):
    if isinstance(p, Point3D):
        if p.frame is not None and p.frame != expected:
            raise FrameMismatch(f"expected a point in {expected!r}, got {p.frame!r}")
        return p.xyz, p.frame
    return np.asarray(p, float), None


def error_3d(a, b) -> ErrorStats:
    """Euclidean distance (mm) between left-camera points per shared key."""
    da, db, shared, excluded = _pair(a, b)
    samples = []
    for k in shared:
        pa, fa = _xyz(da[k])
        pb, fb = _xyz(db[k])
        if fa is not None and fb is not None and fa != fb:
            raise FrameMismatch(f"{k}: {fa!r} vs {fb!r}")
        samples.append((k, float(np.linalg.norm(pa - pb))))
    return ErrorStats.from_samples(samples, "mm", excluded)


def neighbor_distance_samples(points, caliper_ref, frame=None):
    """Per-pair |measured - caliper| for one frame's points.

    Returns ``(samples, missing)`` where ``missing`` lists caliper pairs with
    an absent endpoint.
    """
    pos = {}
    for pid, p in points:
        pos[pid] = _xyz(p)[0]
    samples, missing = [], []
    for (i, j), ref in caliper_ref:
        if i not in pos or j not in pos:
            missing.append((i, j))
            continue
        d = float(np.linalg.norm(pos[j] - pos[i]))
        key = (i, j) if frame is None else (frame, i, j)
        samples.append((key, abs(d - float(ref))))
    return samples, missing


def neighbor_distances(points, caliper_ref) -> ErrorStats:
    """Inter-point distances against caliper references (mm).

    Pairs with a missing endpoint are skipped and counted in ``excluded``.
    """
    samples, missing = neighbor_distance_samples(points, caliper_ref)
    if not samples:
        raise MissingNeighbor(f"no caliper pair has both endpoints (missing {missing})")
    return ErrorStats.from_samples(samples, "mm", len(missing))


# ---------------------------------------------------------------------------
# report

PAIRS_2D = (("p_gt-p_reproj", "gt", "reproj"),
            ("p_m-p_reproj", "model", "reproj"),
            ("p_m-p_gt", "model", "gt"))
PAIRS_3D = (("d_gt-d_he", "gt", "he"),
            ("d_m-d_gt", "model", "gt"),
            ("d_m-d_he", "model", "he"))
CALIPER_METHODS = (("d_he", "he"), ("d_gt", "gt"), ("d_m", "model"))


@dataclass
class EvaluationReport:
    dataset: str
    table_2d: dict   # pair -> side -> ErrorStats | None
    table_3d: dict   # pair -> ErrorStats | None
    caliper: dict    # method -> ErrorStats | None
    missing: dict = field(default_factory=dict)  # cell path -> reason

    def cells(self):
        for pair, sides in self.table_2d.items():
            for side, st in sides.items():
                yield f"2d/{pair}/{side}", st
        for pair, st in self.table_3d.items():
            yield f"3d/{pair}", st
        for method, st in self.caliper.items():
            yield f"caliper/{method}", st

    def to_record(self) -> dict:
        def rec(st):
            return None if st is None else st.to_record()
        return {
            "dataset": self.dataset,
            "std_convention": "population",
            "table_2d": {p: {s: rec(st) for s, st in sides.items()} for p, sides in self.table_2d.items()},
            "table_3d": {p: rec(st) for p, st in self.table_3d.items()},
            "caliper": {m: rec(st) for m, st in self.caliper.items()},
            "missing": dict(sorted(self.missing.items())),
        }

    def to_text(self) -> str:
        def cell(st):
            return "n/a" if st is None else st.format()

        lines = [f"dataset: {self.dataset}  (mean±std, population std)", "",
                 "2D error [px]"]
        head = ["", *[c for p, _, _ in PAIRS_2D for c in (p, "")]]
        sub = ["", *["Left", "Right"] * len(PAIRS_2D)]
        row = [self.dataset, *[cell(self.table_2d[p][s]) for p, _, _ in PAIRS_2D
                                for s in ("left", "right")]]
        lines += _align([head, sub, row])
        lines += ["", "3D error [mm]"]
        lines += _align([["", *[p for p, _, _ in PAIRS_3D]],
                         [self.dataset, *[cell(self.table_3d[p]) for p, _, _ in PAIRS_3D]]])
        lines += ["", "Neighbour distance vs caliper [mm]"]
        lines += _align([["", *[m for m, _ in CALIPER_METHODS]],
                         [self.dataset, *[cell(self.caliper[m]) for m, _ in CALIPER_METHODS]]])
        if self.missing:
            lines += ["", "missing cells:"]
            lines += [f"  {k}: {v}" for k, v in sorted(self.missing.items())]
        return "\n".join(lines) + "\n"


def _align(rows) -> list[str]:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]


def build_report(dataset: str, points_2d: dict, points_3d: dict, caliper_ref=()) -> EvaluationReport:
    """Fill every table cell from the per-source point lists.

    ``points_2d[source][side]`` is a list of ``(frame, id, px)`` for sources
    ``gt``, ``model`` and ``reproj``; ``points_3d[source]`` is a list of
    ``(frame, id, xyz)`` in the left-camera frame for ``gt``, ``model``,
    ``he``. A cell whose inputs share no keys is reported as missing.
    """
    missing = {}

    def attempt(path, fn, *args):
        try:
            return fn(*args)
        except EvaluationError as exc:
            missing[path] = f"{type(exc).__name__}: {exc}"
            return None

    table_2d = {}
    for name, a, b in PAIRS_2D:
        table_2d[name] = {side: attempt(f"2d/{name}/{side}", error_2d,
                                        points_2d.get(a, {}).get(side, []),
                                        points_2d.get(b, {}).get(side, []))
                          for side in ("left", "right")}
    table_3d = {name: attempt(f"3d/{name}", error_3d, points_3d.get(a, []), points_3d.get(b, []))
                for name, a, b in PAIRS_3D}

    caliper = {}
    caliper_ref = list(caliper_ref)
    for name, src in CALIPER_METHODS:
        by_frame = {}
        for frame, pid, p in points_3d.get(src, []):
            by_frame.setdefault(frame, []).append((pid, p))
        samples, n_missing = [], 0
        for frame in sorted(by_frame):
            s, miss = neighbor_distance_samples(by_frame[frame], caliper_ref, frame)
            samples += s
            n_missing += len(miss)
        if samples:
            caliper[name] = ErrorStats.from_samples(samples, "mm", n_missing)
        else:
            caliper[name] = None
            missing[f"caliper/{name}"] = "MissingNeighbor: no caliper pair with both endpoints"
    return EvaluationReport(dataset, table_2d, table_3d, caliper, missing)
