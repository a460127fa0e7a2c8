import json

import numpy as np
import pytest
from scipy.special import ellipe

from endodepth.calibration import PivotResult, pivot_calibrate, stylus_tip_in_world
from endodepth.camera import project
from endodepth.pipeline import run_scene
from endodepth.rigid import apply
from endodepth.scene import (ConfigError, DetectorConfig, NoiseConfig, SceneConfig, Unviewable,
                             annulus_length, generate_annulus, generate_scene, observation_files)


def fine_arc(a, b, h, t0, t1, n=200_001):
    """Arc length by dense trapezoid sampling of the curve speed."""
    t = np.linspace(t0, t1, n)
    speed = np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2 + (2 * h * np.sin(2 * t)) ** 2)
    return np.trapezoid(speed, t)


def test_annulus_circle_quadrants():
    pts = generate_annulus(4, 10.0, 10.0, 0.0)
    np.testing.assert_allclose(pts, [[10, 0, 0], [0, 10, 0], [-10, 0, 0], [0, -10, 0]], atol=1e-9)
    chords = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    assert np.ptp(chords) <= 1e-9


@pytest.mark.parametrize("n,a,b,h", [(12, 17, 14, 5), (7, 20, 9, 3), (30, 15, 15, 6), (2, 5, 3, 1)])
def test_annulus_equal_arc_segments(n, a, b, h):
    pts = generate_annulus(n, a, b, h)
    theta = np.unwrap(np.arctan2(pts[:, 1] / b, pts[:, 0] / a))
    theta = np.append(theta, 2 * np.pi)
    segs = np.array([fine_arc(a, b, h, theta[k], theta[k + 1]) for k in range(n)])
    assert np.ptp(segs) / segs.mean() <= 1e-4
    np.testing.assert_allclose(pts[:, 2], h * (2 * (pts[:, 0] / a) ** 2 - 1), atol=1e-9)


@pytest.mark.parametrize("a,b", [(17, 14), (30, 5), (9, 12)])
def test_ellipse_perimeter(a, b):
    major, minor = max(a, b), min(a, b)
    ref = 4 * major * ellipe(1 - (minor / major) ** 2)
    assert annulus_length(a, b, 0.0) == pytest.approx(ref, rel=1e-6)


def test_annulus_rejects_single_point():
    with pytest.raises(ValueError):
        generate_annulus(1, 10, 10, 0)


def small_cfg(**kw):
    base = dict(seed=11, n_pivot_poses=60, n_eval_frames=3)
    base.update(kw)
    return SceneConfig(**base)


def dumped(scene):
    files = observation_files(scene.noisy, scene.rig, scene.caliper)
    return json.dumps([files, scene.truth_record()], sort_keys=True)


def test_same_seed_identical():
    assert dumped(generate_scene(small_cfg())) == dumped(generate_scene(small_cfg()))
    assert dumped(generate_scene(small_cfg())) != dumped(generate_scene(small_cfg(seed=12)))


def test_noise_free_consistency():
    s = generate_scene(small_cfg())
    for f, E in enumerate(s.eval_camera_poses):
        rec = s.clean["detections"]["gt"][2 * f]
        assert (rec["frame_id"], rec["side"]) == (f, "left")
        px = np.stack([p for _, p in rec["points"]])
        np.testing.assert_array_equal(px, project(s.rig.left, E, s.annulus))
    truth = PivotResult(s.tip_offset, s.pivot_point, 0, 0, 0, 0, 0, 0)
    for p, pose in zip(s.annulus, s.clean["stylus"]):
        assert np.abs(stylus_tip_in_world(pose, truth) - p).max() <= 1e-12


def test_noise_free_pivot_stream():
    s = generate_scene(small_cfg())
    res = pivot_calibrate(s.clean["pivot"])
    assert np.abs(res.tip_offset - s.tip_offset).max() <= 1e-6


def test_detections_within_image():
    s = generate_scene(small_cfg(noise=NoiseConfig(px_sigma=3.0)))
    w, h = s.rig.left.image_size
    for source in ("gt", "model"):
        for rec in s.noisy["detections"][source]:
            for _, p in rec["points"]:
                assert 0 <= p[0] <= w and 0 <= p[1] <= h
    for fr in s.noisy["handeye"]:
        for c in fr.correspondences:
            assert s.rig.left.in_image(c.image_point).all()


def test_marker_chain_consistent():
    s = generate_scene(small_cfg())
    for E, M in zip(s.eval_camera_poses, s.eval_marker_poses):
        assert (s.d_rc @ M).allclose(E, 1e-9)


def test_unviewable_geometry():
    with pytest.raises(Unviewable):
        generate_scene(small_cfg(working_distance=15.0))


@pytest.mark.parametrize("override,field", [
    (dict(n_points=1), "n_points"),
    (dict(noise={"px_sigma": -1}), "noise.px_sigma"),
    (dict(annulus={"a": 0}), "annulus.a"),
    (dict(bogus=1), "bogus"),
    (dict(noise={"typo": 1}), "noise.typo"),
])
def test_config_errors_name_field(override, field):
    with pytest.raises(ConfigError) as exc:
        SceneConfig.from_dict(override)
    assert exc.value.field == field
    assert field in str(exc.value)


def test_config_round_trip():
    cfg = SceneConfig(seed=5, noise=NoiseConfig(px_sigma=0.0))
    assert SceneConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_px_noise_monte_carlo():
    """m - gt pixel error against a direct simulation of the same noise:
    two independent N(0, 2^2) label/detector errors, kept when within the
    6 px true-positive radius."""
    cfg = small_cfg(n_eval_frames=30, noise=NoiseConfig(px_sigma=2.0, marker_t_sigma=0.0,
                                                        marker_r_sigma=0.0),
                    detector=DetectorConfig(miss_prob=0.0, n_false_positives=0))
    report, _ = run_scene(generate_scene(cfg))
    rng = np.random.default_rng(99)
    d = np.linalg.norm(rng.normal(0, 2.0, (200_000, 2)) - rng.normal(0, 2.0, (200_000, 2)), axis=1)
    expected = d[d <= 6.0].mean()
    for side in ("left", "right"):
        got = report.table_2d["p_m-p_gt"][side].mean
        assert abs(got - expected) <= 0.10 * expected


def test_zero_noise_through_both_pipelines():
    cfg = small_cfg(noise=NoiseConfig(0.0, 0.0, 0.0))
    s = generate_scene(cfg)
    report, stages = run_scene(s)
    for path, st in report.cells():
        assert st is not None, path
        assert st.mean <= 1e-6 and st.std <= 1e-6, path
    # stylus chain and triangulation agree point for point
    for f, pts in stages["gt_points"].items():
        E = s.eval_camera_poses[f]
        for tp in pts:
            np.testing.assert_allclose(tp.position, apply(E, s.annulus[tp.id]), atol=1e-6)
