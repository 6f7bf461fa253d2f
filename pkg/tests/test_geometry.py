import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from usrecon.geometry import (InvalidParameterError, Pose6, RigidTransform, apply, compose,
                              euler_derivatives, euler_to_matrix, interpolate_poses, invert,
                              make_transform, matrix_to_euler, rot_x, rot_y, rot_z, translate)

angle = st.floats(-np.pi, np.pi, allow_nan=False)
coord = st.floats(-500, 500, allow_nan=False)
poses = st.builds(Pose6, coord, coord, coord, angle, angle, angle)


def test_zero_pose_is_identity():
    assert np.array_equal(make_transform(Pose6()).matrix, np.eye(4))


def test_pure_translation():
    T = make_transform(Pose6(1, 2, 3, 0, 0, 0))
    assert np.array_equal(T.rotation, np.eye(3))
    assert np.array_equal(T.translation, [1, 2, 3])


def test_quarter_turn_about_z():
    T = make_transform(Pose6(0, 0, 0, np.pi / 2, 0, 0))
    assert np.allclose(apply(T, [1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_half_turn_about_z():
    T = make_transform(Pose6(0, 0, 0, np.pi, 0, 0))
    assert np.allclose(apply(T, [1, 1, 0]), [-1, -1, 0], atol=1e-12)


def test_euler_order():
    a, b, g = 0.3, -0.7, 1.1
    assert np.allclose(euler_to_matrix(a, b, g), rot_z(a) @ rot_y(b) @ rot_x(g), atol=1e-15)
    # third row depends on beta and gamma only
    R = euler_to_matrix(a, b, g)
    assert np.allclose(R[2], [-np.sin(b), np.cos(b) * np.sin(g), np.cos(b) * np.cos(g)])


def test_compose_examples():
    T = make_transform(Pose6(4, 5, 6, 0.1, 0.2, 0.3))
    I = RigidTransform.identity()
    assert np.allclose(compose(I, T).matrix, T.matrix)
    assert np.allclose(compose(T, invert(T)).matrix, np.eye(4), atol=1e-12)
    assert np.allclose(compose(translate(1, 0, 0), translate(0, 1, 0)).matrix, translate(1, 1, 0).matrix)


def test_invert_examples():
    assert np.array_equal(invert(RigidTransform.identity()).matrix, np.eye(4))
    assert np.allclose(invert(translate(1, 2, 3)).matrix, translate(-1, -2, -3).matrix)


def test_apply_examples():
    assert np.allclose(apply(RigidTransform.identity(), [5, 6, 7]), [5, 6, 7])
    assert np.allclose(apply(translate(1, 0, 0), [0, 0, 0]), [1, 0, 0])
    pts = np.arange(12.0).reshape(4, 3)
    assert apply(translate(1, 0, 0), pts).shape == (4, 3)


def test_non_finite_rejected():
    with pytest.raises(InvalidParameterError):
        Pose6(0, np.nan, 0, 0, 0, 0)
    with pytest.raises(InvalidParameterError):
        make_transform(Pose6(0, 0, 0, np.inf, 0, 0))
    M = np.eye(4)
    M[0, 3] = np.inf
    with pytest.raises(InvalidParameterError):
        RigidTransform(M)


def test_reflection_rejected():
    with pytest.raises(InvalidParameterError):
        RigidTransform.from_rt(np.diag([1.0, 1.0, -1.0]), [0, 0, 0])


def test_bottom_row_forced():
    M = np.eye(4)
    M[3] = [1, 2, 3, 4]
    assert np.array_equal(RigidTransform(M).matrix[3], [0, 0, 0, 1])


def test_angles_wrapped():
    p = Pose6(0, 0, 0, 3 * np.pi / 2, -np.pi, np.pi)
    assert np.isclose(p.alpha, -np.pi / 2)
    assert p.beta == pytest.approx(np.pi)
    assert p.gamma == pytest.approx(np.pi)


@given(poses)
def test_rotation_orthonormal(p):
    R = make_transform(p).rotation
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


@given(poses)
def test_inverse_is_exact(p):
    T = make_transform(p)
    assert np.abs((invert(T) @ T).matrix - np.eye(4)).max() < 1e-12 * max(1.0, np.abs(T.translation).max())


@given(poses, poses, poses)
def test_associative(a, b, c):
    A, B, C = map(make_transform, (a, b, c))
    lhs = compose(compose(A, B), C).matrix
    rhs = compose(A, compose(B, C)).matrix
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(lhs).max())


@given(poses, poses, st.tuples(coord, coord, coord))
def test_apply_composes(a, b, p):
    A, B = make_transform(a), make_transform(b)
    assert np.allclose(apply(compose(A, B), p), apply(A, apply(B, p)), atol=1e-9)


@given(poses)
def test_identity_neutral(p):
    T = make_transform(p)
    I = RigidTransform.identity()
    assert np.array_equal((I @ T).matrix, T.matrix)
    assert np.array_equal((T @ I).matrix, T.matrix)


@given(st.floats(-3.0, 3.0), st.floats(-1.5, 1.5), st.floats(-3.0, 3.0))
def test_matrix_to_euler_round_trip(a, b, g):
    R = euler_to_matrix(a, b, g)
    assert np.allclose(euler_to_matrix(*matrix_to_euler(R)), R, atol=1e-9)


def test_euler_derivatives_match_finite_differences():
    a, b, g = 0.4, -0.3, 0.9
    h = 1e-6
    d = euler_derivatives(a, b, g)
    for k, dk in enumerate(d):
        e = np.zeros(3)
        e[k] = h
        fd = (euler_to_matrix(*(np.array([a, b, g]) + e)) - euler_to_matrix(*(np.array([a, b, g]) - e))) / (2 * h)
        assert np.allclose(dk, fd, atol=1e-8)


def test_interpolate_poses():
    A = RigidTransform.identity()
    B = make_transform(Pose6(10, 0, 0, 0.5, 0, 0))
    mid = interpolate_poses([0.0, 1.0], [A, B], [0.5])[0]
    assert np.allclose(mid.translation, [5, 0, 0])
    assert np.isclose(mid.to_pose().alpha, 0.25)
    near = interpolate_poses([0.0, 1.0], [A, B], [0.4, 0.6], mode="nearest")
    assert near[0] is A and near[1] is B
    clamped = interpolate_poses([0.0, 1.0], [A, B], [-1.0, 2.0])
    assert np.allclose(clamped[1].matrix, B.matrix)
