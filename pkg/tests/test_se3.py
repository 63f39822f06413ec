import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import seeds, transforms
from trajtransfer.exceptions import DegenerateDecompositionError, InvalidRotationError
from trajtransfer.se3 import (
    Transform,
    change_delta_frame,
    compose,
    compose_all,
    euler_zyx,
    exp_so3,
    exp_so3_batch,
    inverse,
    is_rotation,
    log_so3,
    look_at,
    orthonormalize,
    project_to_z_rotation,
    quat_to_matrix,
    random_rotation,
    random_unit_vectors,
    rot_x,
    rot_y,
    rot_z,
    rotation_angle,
    rotation_angle_batch,
    rotation_angle_between,
    skew,
    uniform_random_rotation,
    vee,
)


@settings(max_examples=200, deadline=None)
@given(transforms(), transforms(), transforms())
def test_compose_associative(a, b, c):
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(transforms())
def test_inverse_is_two_sided(t):
    assert compose(t, inverse(t)).allclose(Transform.identity(), atol=1e-12)
    assert compose(inverse(t), t).allclose(Transform.identity(), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(transforms(), transforms())
def test_compose_matches_matrix_product(a, b):
    assert np.allclose((a @ b).matrix, a.matrix @ b.matrix, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(transforms())
def test_compose_results_are_rotations(t):
    r = compose_all([t, t, inverse(t), t]).rotation
    assert is_rotation(r)


def test_apply_matches_homogeneous_product(rng):
    t = Transform(uniform_random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(20, 3))
    homog = np.c_[p, np.ones(20)] @ t.matrix.T
    assert np.allclose(t.apply(p), homog[:, :3], atol=1e-12)


def test_transform_is_immutable():
    t = Transform.identity()
    with pytest.raises(ValueError):
        t.rotation[0, 0] = 2.0


def test_transform_rejects_bad_shapes():
    with pytest.raises(InvalidRotationError):
        Transform(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        Transform(np.eye(3), np.zeros(4))
    with pytest.raises(ValueError):
        Transform.from_matrix(np.eye(3))


def test_json_round_trip_exact(rng):
    t = Transform(uniform_random_rotation(rng), rng.normal(size=3))
    back = Transform.from_json(t.to_json())
    assert np.array_equal(back.matrix, t.matrix)
    with pytest.raises(ValueError):
        Transform.from_json({"r": [[1, 0, 0]]})


def test_compose_reorthonormalises_drift():
    bad = Transform.__new__(Transform)
    r = rot_z(0.3) * (1 + 1e-5)
    object.__setattr__(bad, "rotation", r)
    object.__setattr__(bad, "translation", np.zeros(3))
    out = compose(bad, Transform.identity())
    assert is_rotation(out.rotation)


# -- SO(3) maps against scipy -----------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.tuples(*[st.floats(-3.0, 3.0, allow_nan=False)] * 3))
def test_exp_matches_scipy(v):
    v = np.array(v)
    if np.linalg.norm(v) >= math.pi:
        v = v / np.linalg.norm(v) * (math.pi - 1e-3)
    assert np.allclose(exp_so3(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)
    assert np.allclose(log_so3(exp_so3(v)), v, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_log_matches_scipy_on_uniform_rotations(seed):
    r = uniform_random_rotation(seed)
    v = log_so3(r)
    ref = Rotation.from_matrix(r).as_rotvec()
    assert np.allclose(v, ref, atol=1e-7)
    assert rotation_angle(r) == pytest.approx(np.linalg.norm(ref), abs=1e-9)


def test_log_near_pi_and_small_angles():
    axis = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
    for theta in (math.pi, math.pi - 1e-6, math.pi - 1e-3, 1e-8, 1e-12, 0.0):
        r = Rotation.from_rotvec(axis * theta).as_matrix()
        v = log_so3(r)
        assert np.linalg.norm(v) == pytest.approx(theta, abs=1e-7)
        assert np.allclose(exp_so3(v), r, atol=1e-9)


def test_batched_maps_agree_with_scalar(rng):
    v = rng.normal(size=(50, 3))
    v[0] = 0.0
    v[1] = 1e-9
    r = exp_so3_batch(v)
    for vi, ri in zip(v, r):
        assert np.allclose(ri, exp_so3(vi), atol=1e-12)
    assert np.allclose(rotation_angle_batch(r), [rotation_angle(x) for x in r], atol=1e-12)


def test_skew_vee_inverse(rng):
    v = rng.normal(size=3)
    assert np.array_equal(vee(skew(v)), v)
    w = rng.normal(size=3)
    assert np.allclose(skew(v) @ w, np.cross(v, w))


def test_elementary_rotations_match_scipy():
    for f, ax in ((rot_x, "x"), (rot_y, "y"), (rot_z, "z")):
        assert np.allclose(f(0.7), Rotation.from_euler(ax, 0.7).as_matrix(), atol=1e-15)


def test_quaternion_convention_wxyz(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    ref = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    assert np.allclose(quat_to_matrix(q), ref, atol=1e-12)


def test_random_rotation_has_exact_magnitude():
    for mag in (0.0, 0.1, 1.0, 3.0):
        assert rotation_angle(random_rotation(mag, seed=3)) == pytest.approx(mag, abs=1e-12)


def test_random_unit_vectors_reproducible():
    a, b = random_unit_vectors(10, 4), random_unit_vectors(10, 4)
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)


def test_orthonormalize_projects_to_nearest_rotation(rng):
    r = uniform_random_rotation(rng)
    noisy = r + 1e-4 * rng.normal(size=(3, 3))
    fixed = orthonormalize(noisy)
    assert is_rotation(fixed)
    assert rotation_angle_between(fixed, r) < 1e-3


def test_rotation_angle_between_symmetric(rng):
    a, b = uniform_random_rotation(rng), uniform_random_rotation(rng)
    assert rotation_angle_between(a, b) == pytest.approx(rotation_angle_between(b, a), abs=1e-12)


# -- frames and Euler ---------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(transforms(), transforms(), transforms())
def test_change_delta_frame_is_robot_frame_relative_pose(t_rc, demo, test):
    c_delta = compose(test, inverse(demo))
    direct = compose(compose(t_rc, test), inverse(compose(t_rc, demo)))
    assert change_delta_frame(t_rc, c_delta).allclose(direct, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-math.pi + 1e-6, math.pi - 1e-6),
    st.floats(-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3),
    st.floats(-math.pi + 1e-6, math.pi - 1e-6),
)
def test_euler_zyx_matches_scipy(yaw, pitch, roll):
    r = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
    got = euler_zyx(r)
    ref = Rotation.from_matrix(r).as_euler("ZYX")
    assert np.allclose(got, ref, atol=1e-9)
    assert np.allclose(project_to_z_rotation(r), rot_z(yaw), atol=1e-9)


def test_euler_gimbal_lock_raises():
    with pytest.raises(DegenerateDecompositionError):
        euler_zyx(rot_z(0.3) @ rot_y(math.pi / 2) @ rot_x(0.2))


def test_project_fixed_point():
    assert np.allclose(project_to_z_rotation(rot_z(1.2)), rot_z(1.2), atol=1e-12)


def test_look_at_points_optical_axis_at_target():
    eye = np.array([0.2, 0.1, 0.9])
    target = np.array([0.65, 0.0, 0.0])
    t = look_at(eye, target)
    assert is_rotation(t.rotation)
    in_cam = inverse(t).apply(target[None])[0]
    assert np.allclose(in_cam[:2], 0.0, atol=1e-12) and in_cam[2] > 0
    with pytest.raises(ValueError):
        look_at([0, 0, 1], [0, 0, 0])
