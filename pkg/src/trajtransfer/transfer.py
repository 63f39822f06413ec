"""Trajectory transfer: re-express a demonstrated end-effector trajectory in a test scene."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .exceptions import AmbiguousIncrementError
from .se3 import (
    Transform,
    compose,
    exp_so3,
    inverse,
    log_so3,
    project_to_z_rotation,
    rotation_angle_between,
)

DEFAULT_TIMESTEP_S = 1.0 / 30.0


@dataclass(frozen=True)
class DemoTrajectory:
    """End-effector poses ``T_RE_t`` in the robot frame, sampled every ``timestep`` seconds.

    ``observation`` optionally references the demonstration point cloud (an
    in-memory PointCloud or a file path).
    """

    poses: tuple[Transform, ...]
    timestep: float = DEFAULT_TIMESTEP_S
    observation: Any = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a demonstration needs at least one pose")
        if not self.timestep > 0:
            raise ValueError(f"timestep must be positive, got {self.timestep}")

    def __len__(self) -> int:
        return len(self.poses)

    def to_json(self) -> dict:
        out: dict = {
            "timestep_s": float(self.timestep),
            "poses": [p.to_json() for p in self.poses],
        }
        if isinstance(self.observation, str):
            out["observation"] = self.observation
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DemoTrajectory":
        try:
            poses = [Transform.from_json(p) for p in obj["poses"]]
            timestep = float(obj["timestep_s"])
        except (KeyError, TypeError) as exc:
            raise ValueError("demo trajectory needs 'timestep_s' and 'poses'") from exc
        return cls(poses, timestep, obj.get("observation"))


@dataclass(frozen=True)
class TransferResult:
    poses: tuple[Transform, ...]
    applied_delta: Transform
    bias_applied: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "poses": [p.to_json() for p in self.poses],
            "applied_delta": self.applied_delta.to_json(),
            "bias_applied": bool(self.bias_applied),
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True, eq=False)
class Twist:
    """Per-step body-frame increment: rotation vector (rad) and translation (m)."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def as_transform(self) -> Transform:
        return Transform(exp_so3(self.angular), self.linear)


def transfer_trajectory(
    demo: DemoTrajectory, r_delta: Transform, bias_applied: bool = False
) -> TransferResult:
    """Left-compose the robot-frame relative object pose onto every demo pose."""
    poses = tuple(compose(r_delta, p) for p in demo.poses)
    return TransferResult(poses, r_delta, bias_applied)


def adjust_delta_translation(r_delta: Transform, first_demo_pose: Transform) -> Transform:
    """Restrict ``r_delta`` to a rotation about z, keeping the first transferred position.

    With ``p`` the first end-effector position, the adjusted translation is
    ``R p - R' p + t`` where ``R'`` is the z-only projection of ``R``.
    """
    r = r_delta.rotation
    r_proj = project_to_z_rotation(r)
    p = first_demo_pose.translation
    t_adj = r @ p - r_proj @ p + r_delta.translation
    return Transform(r_proj, t_adj)


def trajectory_to_twists(demo: DemoTrajectory | Sequence[Transform]) -> list[Twist]:
    poses = demo.poses if isinstance(demo, DemoTrajectory) else tuple(demo)
    if len(poses) < 2:
        raise ValueError("need at least two poses to extract increments")
    twists = []
    for i, (a, b) in enumerate(zip(poses[:-1], poses[1:])):
        rel = compose(inverse(a), b)
        if math.pi - rotation_angle_between(rel.rotation, np.eye(3)) < 1e-9:
            raise AmbiguousIncrementError(
                f"poses {i} and {i + 1} differ by a rotation of pi; increment axis is ambiguous"
            )
        twists.append(Twist(log_so3(rel.rotation), rel.translation))
    return twists


def integrate_twists(start: Transform, twists: Sequence[Twist]) -> list[Transform]:
    poses = [start]
    for tw in twists:
        poses.append(compose(poses[-1], tw.as_transform()))
    return poses


def eef_start_error(truth: Transform, estimate: Transform) -> tuple[float, float]:
    """(position error in m, rotation error in rad) between two end-effector poses."""
    t_err = float(np.linalg.norm(truth.translation - estimate.translation))
    r_err = rotation_angle_between(truth.rotation, estimate.rotation)
    return t_err, r_err
