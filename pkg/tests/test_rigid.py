import numpy as np
import pytest
from hypothesis import given, settings

from endodepth.rigid import (FrameMismatch, Point3D, RigidTransform, apply, compose, invert,
                             rotvec_to_matrix)

from conftest import random_transform, rigid_transforms

I = RigidTransform.identity()


def test_compose_identity(rng):
    T = random_transform(rng)
    assert compose(I, T).allclose(T, 0)
    assert compose(T, I).allclose(T, 1e-12)


def test_compose_inverse_is_identity(rng):
    T = random_transform(rng)
    assert compose(T, invert(T)).allclose(I, 1e-9)


def test_compose_matches_dense_product(rng):
    for _ in range(20):
        A, B = random_transform(rng), random_transform(rng)
        np.testing.assert_allclose(compose(A, B).matrix, A.matrix @ B.matrix, atol=1e-10)


def test_invert_examples(rng):
    assert invert(I).allclose(I, 0)
    T = RigidTransform(np.eye(3), [1, 2, 3])
    np.testing.assert_array_equal(invert(T).translation, [-1, -2, -3])
    for _ in range(20):
        T = random_transform(rng)
        np.testing.assert_allclose(invert(T).matrix, np.linalg.inv(T.matrix), atol=1e-10)


def test_apply_examples(rng):
    np.testing.assert_array_equal(apply(I, [1, 0, 0]), [1, 0, 0])
    Rz = RigidTransform.from_rotvec([0, 0, np.pi / 2])
    np.testing.assert_allclose(apply(Rz, [1, 0, 0]), [0, 1, 0], atol=1e-12)
    for _ in range(20):
        T = random_transform(rng)
        p = rng.uniform(-100, 100, 3)
        hom = T.matrix @ np.append(p, 1.0)
        np.testing.assert_allclose(apply(T, p), hom[:3], atol=1e-10)


def test_apply_batch_matches_single(rng):
    T = random_transform(rng)
    pts = rng.normal(size=(7, 3))
    np.testing.assert_allclose(apply(T, pts), np.stack([apply(T, p) for p in pts]))


@settings(max_examples=60, deadline=None)
@given(rigid_transforms())
def test_inverse_property(T):
    C = compose(T, invert(T))
    assert np.abs(C.rotation - np.eye(3)).max() <= 1e-9
    assert np.linalg.norm(C.translation) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(rigid_transforms(), rigid_transforms(), rigid_transforms())
def test_associativity(A, B, C):
    lhs = compose(compose(A, B), C)
    rhs = compose(A, compose(B, C))
    np.testing.assert_allclose(lhs.matrix, rhs.matrix, rtol=0, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(rigid_transforms(), rigid_transforms(), rigid_transforms(max_t=1e3))
def test_apply_compose(A, B, P):
    p = P.translation
    np.testing.assert_allclose(apply(compose(A, B), p), apply(A, apply(B, p)), rtol=0, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(rigid_transforms(), rigid_transforms())
def test_results_stay_proper_rotations(A, B):
    R = compose(A, B).rotation
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9
    assert abs(np.linalg.det(R) - 1) <= 1e-9


def test_drifted_rotation_is_projected():
    R = rotvec_to_matrix([0.3, -0.2, 0.1])
    T = RigidTransform(R + 1e-6, [0, 0, 0])
    assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() <= 1e-12
    assert abs(np.linalg.det(T.rotation) - 1) <= 1e-12
    np.testing.assert_allclose(T.rotation, R, atol=1e-5)


def test_reflection_is_corrected():
    T = RigidTransform(np.diag([1.0, 1.0, -1.0]), [0, 0, 0])
    assert np.linalg.det(T.rotation) == pytest.approx(1.0)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), [0, np.nan, 0])
    with pytest.raises(ValueError):
        Point3D([np.inf, 0, 0])


def test_frame_tags_checked():
    a = RigidTransform.identity("marker", "camera-left")
    b = RigidTransform.identity("world", "marker")
    ab = compose(a, b)
    assert (ab.source, ab.target) == ("world", "camera-left")
    with pytest.raises(FrameMismatch):
        compose(b, a)
    p = apply(ab, Point3D([1, 2, 3], "world"))
    assert p.frame == "camera-left"
    with pytest.raises(FrameMismatch):
        apply(ab, Point3D([1, 2, 3], "marker"))
    # untagged values compose freely
    compose(RigidTransform.identity(), b)


def test_record_round_trip(rng):
    T = RigidTransform(random_transform(rng).rotation, [1.5, -2, 3], "world", "marker")
    rec = T.to_record()
    assert len(rec["rotation"]) == 9 and len(rec["translation_mm"]) == 3
    back = RigidTransform.from_record(rec)
    assert back.allclose(T, 0)
    assert (back.source, back.target) == ("world", "marker")
    # row-major
    m = RigidTransform.from_record({"rotation": [0, -1, 0, 1, 0, 0, 0, 0, 1],
                                    "translation_mm": [0, 0, 0]})
    np.testing.assert_allclose(apply(m, [1, 0, 0]), [0, 1, 0])


def test_quaternion_and_rotvec_views(rng):
    T = random_transform(rng)
    assert RigidTransform.from_quaternion(T.as_quaternion(), T.translation).allclose(T, 1e-12)
    assert RigidTransform.from_rotvec(T.as_rotvec(), T.translation).allclose(T, 1e-12)


def test_rotvec_small_angle():
    w = np.array([1e-10, -2e-10, 3e-10])
    R = rotvec_to_matrix(w)
    np.testing.assert_allclose(R, np.eye(3) + np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]],
                                                         [-w[1], w[0], 0]]), atol=1e-19)
