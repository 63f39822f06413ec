import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import random_transform, seeds, transforms
from trajtransfer.exceptions import AmbiguousIncrementError, DegenerateDecompositionError
from trajtransfer.se3 import Transform, compose, euler_zyx, inverse, rot_x, rot_y, rot_z
from trajtransfer.transfer import (
    DEFAULT_TIMESTEP_S,
    DemoTrajectory,
    Twist,
    adjust_delta_translation,
    eef_start_error,
    integrate_twists,
    trajectory_to_twists,
    transfer_trajectory,
)


def _trajectory(rng, n=20):
    poses = [random_transform(rng, 0.5)]
    for _ in range(n - 1):
        poses.append(compose(poses[-1], Transform(rot_x(rng.normal(0, 0.1)) @ rot_z(rng.normal(0, 0.2)), rng.normal(0, 0.01, 3))))
    return DemoTrajectory(poses)


def test_demo_validation_and_defaults():
    assert DemoTrajectory([Transform.identity()]).timestep == DEFAULT_TIMESTEP_S
    with pytest.raises(ValueError):
        DemoTrajectory([])
    with pytest.raises(ValueError):
        DemoTrajectory([Transform.identity()], timestep=0.0)


def test_demo_json_round_trip(rng):
    demo = _trajectory(rng, 5)
    back = DemoTrajectory.from_json(demo.to_json())
    assert back.timestep == demo.timestep
    assert all(np.array_equal(a.matrix, b.matrix) for a, b in zip(back.poses, demo.poses))
    with pytest.raises(ValueError):
        DemoTrajectory.from_json({"poses": []})


def test_identity_delta_returns_demo(rng):
    demo = _trajectory(rng)
    out = transfer_trajectory(demo, Transform.identity())
    assert all(a.allclose(b, 1e-15) for a, b in zip(out.poses, demo.poses))
    assert out.bias_applied is False


@settings(max_examples=100, deadline=None)
@given(seeds, transforms())
def test_transfer_preserves_relative_motion(seed, delta):
    rng = np.random.default_rng(seed)
    demo = _trajectory(rng, 6)
    out = transfer_trajectory(demo, delta)
    for i in range(len(demo) - 1):
        a = compose(inverse(demo.poses[i]), demo.poses[i + 1])
        b = compose(inverse(out.poses[i]), out.poses[i + 1])
        assert a.allclose(b, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(transforms(), transforms())
def test_bias_adjustment_keeps_first_position(delta, first):
    try:
        adj = adjust_delta_translation(delta, first)
    except DegenerateDecompositionError:
        return
    assert np.allclose(compose(adj, first).translation, compose(delta, first).translation, atol=1e-9)
    yaw, pitch, roll = euler_zyx(adj.rotation)
    assert abs(pitch) < 1e-9 and abs(roll) < 1e-9
    again = adjust_delta_translation(adj, first)
    assert again.allclose(adj, atol=1e-9)


def test_bias_adjustment_formula():
    # R = Rz(0.4) Ry(0.2) Rx(0.1): the projection keeps Rz(0.4)
    r = rot_z(0.4) @ rot_y(0.2) @ rot_x(0.1)
    t = np.array([0.1, -0.2, 0.05])
    p = np.array([0.5, 0.1, 0.3])
    adj = adjust_delta_translation(Transform(r, t), Transform(np.eye(3), p))
    assert np.allclose(adj.rotation, rot_z(0.4), atol=1e-12)
    assert np.allclose(adj.translation, r @ p - rot_z(0.4) @ p + t, atol=1e-12)


def test_twist_round_trip_and_replay(rng):
    demo = _trajectory(rng, 30)
    twists = trajectory_to_twists(demo)
    assert len(twists) == 29
    back = integrate_twists(demo.poses[0], twists)
    assert all(a.allclose(b, 1e-9) for a, b in zip(back, demo.poses))
    delta = random_transform(rng, 0.2)
    out = transfer_trajectory(demo, delta)
    replay = integrate_twists(out.poses[0], twists)
    assert all(a.allclose(b, 1e-9) for a, b in zip(replay, out.poses))


def test_twist_errors():
    with pytest.raises(ValueError):
        trajectory_to_twists([Transform.identity()])
    with pytest.raises(AmbiguousIncrementError):
        trajectory_to_twists([Transform.identity(), Transform(rot_x(math.pi), np.zeros(3))])
    assert integrate_twists(Transform.identity(), [Twist.zero()])[1].allclose(Transform.identity())


def test_eef_start_error_trivial():
    a = Transform(rot_z(0.3), [1.0, 2.0, 3.0])
    b = Transform(rot_z(0.5), [1.0, 2.0, 3.5])
    t, r = eef_start_error(a, b)
    assert t == pytest.approx(0.5)
    assert r == pytest.approx(0.2)
