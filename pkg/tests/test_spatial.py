import numpy as np
import pytest

from teleopsim.spatial import (ForceVector, FrameMismatchError, FrameTransform,
                               MotionVector, build_transform_matrix,
                               force_cross_array, motion_cross_array,
                               orthonormality_residual, skew, skew_many,
                               transform_force, transform_motion, vpf)

from conftest import random_transform


def test_skew_pattern():
    expected = np.array([[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]])
    assert np.array_equal(skew([1.0, 2.0, 3.0]), expected)
    assert np.array_equal(skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_matches_cross_product(rng):
    for _ in range(200):
        r = rng.normal(size=3)
        v = rng.normal(size=3)
        assert np.allclose(skew(r) @ v, np.cross(r, v), atol=1e-12)


def test_skew_many_matches_scalar(rng):
    rs = rng.normal(size=(7, 3))
    batched = skew_many(rs)
    for i, r in enumerate(rs):
        assert np.array_equal(batched[i], skew(r))


def test_transform_matrix_identity():
    t = FrameTransform.identity()
    assert np.array_equal(build_transform_matrix(t), np.eye(6))


def test_transform_matrix_block_structure(rng):
    for _ in range(1000):
        t = random_transform(rng)
        u = build_transform_matrix(t)
        assert np.array_equal(u[:3, :3], t.rotation)
        assert np.array_equal(u[3:, 3:], t.rotation)
        assert np.array_equal(u[:3, 3:], np.zeros((3, 3)))
        assert np.allclose(u[3:, :3], skew(t.translation) @ t.rotation, atol=1e-12)


def test_transform_matrix_unit_translation():
    t = FrameTransform(np.eye(3), np.array([0.0, 0.0, 1.0]))
    u = build_transform_matrix(t)
    assert np.allclose(u[3:, :3], skew([0.0, 0.0, 1.0]), atol=1e-15)


def test_transform_composition(rng):
    for _ in range(100):
        t1 = random_transform(rng)
        t2 = random_transform(rng)
        u_composed = build_transform_matrix(t1.compose(t2))
        assert np.allclose(u_composed, build_transform_matrix(t1) @ build_transform_matrix(t2),
                           atol=1e-10)


def test_transform_motion_identity_and_zero(rng):
    v = MotionVector(rng.normal(size=6))
    assert np.allclose(transform_motion(FrameTransform.identity(), v).data, v.data)
    t = random_transform(rng)
    zero = MotionVector.zero()
    assert np.allclose(transform_motion(t, zero).data, np.zeros(6))


def test_transform_motion_matches_dense_product(rng):
    for _ in range(300):
        t = random_transform(rng)
        v = MotionVector(rng.normal(size=6))
        dense = build_transform_matrix(t).T @ v.data
        assert np.allclose(transform_motion(t, v).data, dense, atol=1e-12)


def test_transform_force_matches_dense_product(rng):
    for _ in range(300):
        t = random_transform(rng)
        f = ForceVector(rng.normal(size=6))
        dense = build_transform_matrix(t) @ f.data
        assert np.allclose(transform_force(t, f).data, dense, atol=1e-12)


def test_power_duality(rng):
    for _ in range(500):
        t = random_transform(rng)
        v = MotionVector(rng.normal(size=6))
        f = ForceVector(rng.normal(size=6))
        lhs = transform_motion(t, v).data @ f.data
        rhs = v.data @ transform_force(t, f).data
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_frame_labels_checked():
    t = FrameTransform(np.eye(3), np.zeros(3), parent="A", child="B")
    v_ok = MotionVector(np.ones(6), frame="A")
    assert transform_motion(t, v_ok).frame == "B"
    with pytest.raises(FrameMismatchError):
        transform_motion(t, MotionVector(np.ones(6), frame="C"))
    with pytest.raises(FrameMismatchError):
        transform_force(t, ForceVector(np.ones(6), frame="A"))


def test_vpf_zero_cases(rng):
    v = MotionVector(rng.normal(size=6), "A")
    f1 = ForceVector(rng.normal(size=6), "A")
    f2 = ForceVector(rng.normal(size=6), "A")
    assert vpf(v, v, f1, f2) == 0.0
    v2 = MotionVector(rng.normal(size=6), "A")
    assert vpf(v, v2, f1, f1) == 0.0


def test_vpf_unit_case():
    e = np.zeros(6)
    e[0] = 1.0
    v_r = MotionVector(e, "A")
    f_r = ForceVector(e, "A")
    assert vpf(v_r, MotionVector.zero("A"), f_r, ForceVector.zero("A")) == 1.0


def test_vpf_frame_mismatch():
    with pytest.raises(FrameMismatchError):
        vpf(MotionVector.zero("A"), MotionVector.zero("B"),
            ForceVector.zero("A"), ForceVector.zero("A"))


def test_rotation_drift_repaired(rng):
    t = random_transform(rng)
    drifted = t.rotation + 1e-8 * rng.normal(size=(3, 3))
    repaired = FrameTransform(drifted, np.zeros(3))
    assert orthonormality_residual(repaired.rotation) < 1e-12


def test_rotation_garbage_rejected():
    with pytest.raises(ValueError):
        FrameTransform(np.eye(3) * 2.0, np.zeros(3))


def test_spatial_cross_self_annihilates(rng):
    # motion cross of a vector with itself vanishes, so the bias force does no
    # work against its own velocity
    for _ in range(100):
        v = rng.normal(size=6)
        assert np.allclose(motion_cross_array(v, v), np.zeros(6), atol=1e-12)
        f = rng.normal(size=6)
        assert abs(v @ force_cross_array(v, f) + motion_cross_array(v, v) @ f) < 1e-12
