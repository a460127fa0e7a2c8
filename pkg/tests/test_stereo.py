import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from endodepth.camera import CameraIntrinsics, StereoRig, project_camera, undistort
from endodepth.rigid import RigidTransform, apply, rotvec_to_matrix
from endodepth.stereo import (LabeledPoint, NegativeDepth, PointMatch, RaysNearParallel,
                              match_true_positives, stereo_correspond, triangulate)


def labels(pts, side="left"):
    return [LabeledPoint(i, side, np.asarray(p, float), "gt") for i, p in enumerate(pts)]


def exhaustive_assignment(preds, gts, threshold):
    """Best one-to-one assignment by enumeration: most matches, then least
    total distance. Branches over every within-threshold option."""
    preds, gts = np.asarray(preds), np.asarray(gts)
    options = [[g for g in range(len(gts)) if np.linalg.norm(p - gts[g]) <= threshold]
               for p in preds]
    best = (0, 0.0, frozenset())

    def rec(i, used, count, cost, pairs):
        nonlocal best
        if i == len(preds):
            if count > best[0] or (count == best[0] and cost < best[1]):
                best = (count, cost, frozenset(pairs))
            return
        rec(i + 1, used, count, cost, pairs)
        for g in options[i]:
            if g not in used:
                d = float(np.linalg.norm(preds[i] - gts[g]))
                rec(i + 1, used | {g}, count + 1, cost + d, pairs + [(i, g)])

    rec(0, frozenset(), 0, 0.0, [])
    return best[2]


def separated_points(rng, n, min_sep, size=(1920, 1080)):
    pts = []
    while len(pts) < n:
        p = rng.uniform([20, 20], [size[0] - 20, size[1] - 20])
        if all(np.linalg.norm(p - q) > min_sep for q in pts):
            pts.append(p)
    return np.array(pts)


def random_instance(rng, threshold=6.0):
    n = int(rng.integers(1, 21))
    gt = separated_points(rng, n, 2 * threshold)
    preds = []
    for p in gt:
        if rng.uniform() < 0.85:
            preds.append(p + rng.normal(0, 3.0, 2))
    preds += list(rng.uniform([0, 0], [1920, 1080], (int(rng.integers(0, 4)), 2)))
    preds = np.array(preds).reshape(-1, 2)
    return preds[rng.permutation(len(preds))], gt


def greedy_pairs(preds, gt, threshold=6.0):
    res = match_true_positives(preds, labels(gt), threshold)
    index = {tuple(p): i for i, p in enumerate(preds)}
    return frozenset((index[tuple(p)], g) for p, g in res.matches)


# --- true-positive filter --------------------------------------------------

def test_exact_predictions_all_match(rng):
    gt = separated_points(rng, 12, 15)
    res = match_true_positives(gt.copy(), labels(gt))
    assert [g for _, g in res.matches] == list(range(12))
    assert res.distances == [0.0] * 12
    assert res.false_positives == []


def test_outside_radius_no_match():
    res = match_true_positives([[107.0, 100.0]], labels([[100.0, 100.0]]))
    assert res.matches == [] and res.false_positives == [0]


def test_radius_boundary_inclusive():
    assert len(match_true_positives([[106.0, 100.0]], labels([[100.0, 100.0]]))) == 1


def test_nearest_prediction_wins():
    res = match_true_positives([[104.0, 100.0], [101.0, 100.0]], labels([[100.0, 100.0]]))
    np.testing.assert_array_equal(res.matches[0][0], [101.0, 100.0])
    assert res.false_positives == [0]


def test_greedy_equals_exhaustive(rng):
    for _ in range(200):
        preds, gt = random_instance(rng)
        assert greedy_pairs(preds, gt) == exhaustive_assignment(preds, gt, 6.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_tp_permutation_invariant(seed, rnd):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 200, (8, 2))  # deliberately crowded
    preds = np.concatenate([gt + rng.normal(0, 4, gt.shape), rng.uniform(0, 200, (4, 2))])
    perm = list(range(len(preds)))
    rnd.shuffle(perm)

    def as_set(res):
        return {(tuple(p), g) for p, g in res.matches}

    a = match_true_positives(preds, labels(gt))
    b = match_true_positives(preds[perm], labels(gt))
    assert as_set(a) == as_set(b)


def test_tp_validation():
    with pytest.raises(ValueError):
        match_true_positives([[0, 0]], labels([[0, 0]]), threshold=0)
    with pytest.raises(ValueError):
        match_true_positives([[0, 0]], [LabeledPoint(1, "left", np.zeros(2), "gt")] * 2)


# --- correspondence ---------------------------------------------------------

def test_stereo_correspond_intersection():
    left = [(np.array([1.0, 1]), 1), (np.array([2.0, 2]), 2), (np.array([3.0, 3]), 3)]
    right = [(np.array([2.5, 2]), 2), (np.array([3.5, 3]), 3), (np.array([4.5, 4]), 4)]
    out = stereo_correspond(left, right)
    assert [m.id for m in out] == [2, 3]
    np.testing.assert_array_equal(out[0].right_px, [2.5, 2])
    assert stereo_correspond([], right) == []
    assert stereo_correspond(left, []) == []


@settings(max_examples=50, deadline=None)
@given(st.sets(st.integers(0, 30)), st.sets(st.integers(0, 30)))
def test_stereo_correspond_size_bound(a, b):
    left = [(np.zeros(2), i) for i in a]
    right = [(np.zeros(2), i) for i in b]
    out = stereo_correspond(left, right)
    assert len(out) <= min(len(left), len(right))
    assert {m.id for m in out} == a & b


# --- triangulation ----------------------------------------------------------

def midpoint(rig, m):
    """Midpoint of the common perpendicular of the two back-projected rays."""
    xl = undistort(rig.left, m.left_px)[0]
    xr = undistort(rig.right, m.right_px)[0]
    inv = rig.left_to_right.inv()
    o1, d1 = np.zeros(3), np.append(xl, 1.0)
    o2 = inv.translation
    d2 = inv.rotation @ np.append(xr, 1.0)
    w = o1 - o2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ w, d2 @ w
    den = a * c - b * b
    s, t = (b * e - c * d) / den, (a * e - b * d) / den
    return 0.5 * (o1 + s * d1 + o2 + t * d2)


def random_rig(rng):
    k = dict(k1=rng.uniform(-0.2, 0), k2=rng.uniform(0, 0.05), p1=rng.uniform(-5e-4, 5e-4),
             p2=rng.uniform(-5e-4, 5e-4))
    left = CameraIntrinsics(rng.uniform(900, 1300), rng.uniform(900, 1300), 960, 540, **k)
    right = CameraIntrinsics(rng.uniform(900, 1300), rng.uniform(900, 1300), 955, 545, **k)
    R = rotvec_to_matrix(rng.normal(0, np.radians(2), 3))
    baseline = rng.uniform(3, 6)
    t = -R @ np.array([baseline, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)])
    return StereoRig(left, right, RigidTransform(R, t))


def in_frustum_point(rng):
    z = rng.uniform(40, 150)
    return np.array([rng.uniform(-0.4, 0.4) * z, rng.uniform(-0.25, 0.25) * z, z])


def observe(rig, p, rng=None, sigma=0.0):
    l = project_camera(rig.left, p)[0]
    r = project_camera(rig.right, apply(rig.left_to_right, p))[0]
    if sigma:
        l = l + rng.normal(0, sigma, 2)
        r = r + rng.normal(0, sigma, 2)
    return PointMatch(0, l, r)


def test_triangulate_round_trip(rng):
    for _ in range(300):
        rig = random_rig(rng)
        p = in_frustum_point(rng)
        tp = triangulate(rig, observe(rig, p))
        assert np.linalg.norm(tp.position - p) <= 1e-6
        assert tp.reproj_residual <= 1e-6


def test_triangulate_matches_midpoint(rng):
    for _ in range(300):
        rig = random_rig(rng)
        m = observe(rig, in_frustum_point(rng))
        assert np.linalg.norm(triangulate(rig, m).position - midpoint(rig, m)) <= 1e-6


def test_zero_baseline_rays_parallel(intr):
    rig = StereoRig(intr, intr, RigidTransform(np.eye(3), [1e-13, 0, 0]))
    m = PointMatch(0, np.array([1000.0, 600.0]), np.array([1000.0, 600.0]))
    with pytest.raises(RaysNearParallel):
        triangulate(rig, m)


def test_point_at_infinity_rays_parallel(rig):
    # identical observations in a parallel rig: rays meet only at infinity
    m = PointMatch(0, np.array([1000.0, 600.0]), np.array([1000.0, 600.0]))
    with pytest.raises(RaysNearParallel):
        triangulate(rig, m)


def test_swapped_views_negative_depth(rig):
    m = observe(rig, np.array([5.0, 3.0, 80.0]))
    with pytest.raises(NegativeDepth):
        triangulate(rig, PointMatch(0, m.right_px, m.left_px))


def test_depth_error_law():
    """Median 3D error under 1 px noise scales like z^2 / (f b)."""
    rig_rng = np.random.default_rng(0)
    intr = CameraIntrinsics(1100, 1100, 960, 540)
    rig = StereoRig(intr, intr, RigidTransform(np.eye(3), [-4.0, 0, 0]))
    depths = (50.0, 100.0, 150.0, 200.0)
    ratios = []
    for z in depths:
        errs = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            for _ in range(20):
                p = np.array([rig_rng.uniform(-0.2, 0.2) * z, rig_rng.uniform(-0.1, 0.1) * z, z])
                errs.append(np.linalg.norm(triangulate(rig, observe(rig, p, rng, 1.0)).position - p))
        ratios.append(np.median(errs) / (z**2 / (intr.fx * rig.baseline)))
    assert max(ratios) / min(ratios) <= 3.0
