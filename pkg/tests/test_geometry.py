import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackfront.geometry import (Pose, quaternion_to_rotation, rotation_angle,
                                 rotation_to_quaternion, se3_compose, se3_exp,
                                 so3_exp)


def random_pose(rng):
    rot = so3_exp(rng.normal(0, 1.0, 3))
    return Pose(rot, rng.normal(0, 2.0, 3))


def test_identity_compose():
    p = Pose(so3_exp([0.1, -0.2, 0.3]), [1.0, 2.0, 3.0])
    q = se3_compose(Pose.identity(), p)
    np.testing.assert_allclose(q.rotation, p.rotation)
    np.testing.assert_allclose(q.translation, p.translation)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(20):
        p = random_pose(rng)
        ident = se3_compose(p, p.inverse())
        assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(ident.translation).max() < 1e-9


def test_compose_matches_matrix_product(rng):
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        c = se3_compose(a, b)
        np.testing.assert_allclose(c.matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_compose_associative(rng):
    for _ in range(30):
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = se3_compose(se3_compose(a, b), c)
        rhs = se3_compose(a, se3_compose(b, c))
        assert np.abs(lhs.matrix() - rhs.matrix()).max() < 1e-9


def test_rotation_validation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))


def test_transform_batch_matches_single(rng):
    p = random_pose(rng)
    pts = rng.normal(0, 1, (10, 3))
    batch = p.transform(pts)
    for i in range(10):
        np.testing.assert_allclose(batch[i], p.transform(pts[i]))


def test_quaternion_round_trip(rng):
    for _ in range(50):
        rot = so3_exp(rng.normal(0, 2.0, 3))
        q = rotation_to_quaternion(rot)
        np.testing.assert_allclose(quaternion_to_rotation(q), rot, atol=1e-12)
        assert q[3] >= 0


def test_se3_exp_small_angle():
    p = se3_exp(np.zeros(6))
    np.testing.assert_allclose(p.matrix(), np.eye(4), atol=1e-15)
    twist = np.array([1e-3, 0, 0, 0, 0, 1e-9])
    p = se3_exp(twist)
    np.testing.assert_allclose(p.translation, [1e-3, 0, 0], atol=1e-11)


def test_rotation_angle():
    assert rotation_angle(np.eye(3)) == 0.0
    rot = so3_exp([0, 0, 0.4])
    assert abs(rotation_angle(rot) - 0.4) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=9, max_size=9))
def test_compose_preserves_orthonormality(vals):
    a = Pose(so3_exp(vals[0:3]), vals[3:6])
    b = Pose(so3_exp(vals[6:9]), [0.0, 0.0, 0.0])
    c = se3_compose(a, b)
    assert np.abs(c.rotation.T @ c.rotation - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(c.rotation) - 1.0) < 1e-9
