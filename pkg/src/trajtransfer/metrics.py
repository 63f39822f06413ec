"""Pose errors between relative transforms, including symmetry-aware ground-truth selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import ScenePair, SymmetrySpec
from .se3 import Transform, change_delta_frame, compose, inverse, log_so3, rot_z, rotation_angle_batch

INFINITE_SYMMETRY_BINS = 360


@dataclass(frozen=True)
class PoseError:
    translation: float
    rotation: float
    ground_truth_index: int = 0

    def __post_init__(self) -> None:
        if self.translation < 0 or not 0 <= self.rotation <= math.pi + 1e-12:
            raise ValueError(f"invalid pose error ({self.translation}, {self.rotation})")


def pose_error(truth: Transform, estimate: Transform) -> PoseError:
    """Magnitudes of ``T_err = truth @ inverse(estimate)``."""
    err = compose(truth, inverse(estimate))
    return PoseError(float(np.linalg.norm(err.translation)), float(np.linalg.norm(log_so3(err.rotation))), 0)


def symmetry_rotations(symmetry: SymmetrySpec) -> list[np.ndarray]:
    """Rotations about the object z-axis that leave the object geometry unchanged.

    Geometry-only symmetries count the same as full ones; an infinite symmetry
    is discretised into 1 degree bins.
    """
    if symmetry.kind == "none":
        return [np.eye(3)]
    n = symmetry.order if symmetry.kind == "finite" else INFINITE_SYMMETRY_BINS
    return [rot_z(2.0 * math.pi * k / n) for k in range(n)]


def _to_frame(pair: ScenePair, t: Transform, frame: str) -> Transform:
    if frame == "camera":
        return t
    if frame == "robot":
        return change_delta_frame(pair.camera.extrinsic, t)
    raise ValueError(f"frame must be 'camera' or 'robot', got {frame!r}")


def enumerate_symmetry_ground_truths(pair: ScenePair, frame: str = "camera") -> list[Transform]:
    """Ground-truth relative poses ``T_CO_test @ S_k @ inverse(T_CO_demo)`` for each symmetry rotation."""
    if pair.symmetry.kind == "none":
        return [_to_frame(pair, pair.true_delta_camera, frame)]
    demo_inv = inverse(pair.object_pose_demo)
    out = []
    for s in symmetry_rotations(pair.symmetry):
        gt = compose(compose(pair.object_pose_test, Transform(s, np.zeros(3))), demo_inv)
        out.append(_to_frame(pair, gt, frame))
    return out


def symmetry_aware_error(pair: ScenePair, estimate: Transform, frame: str = "camera") -> PoseError:
    """Error against the symmetric ground truth with the smallest rotation error (lowest index on ties)."""
    est = _to_frame(pair, estimate, frame)
    if pair.symmetry.kind == "none":
        rg = pair.true_delta_camera.rotation[None]
        tg = pair.true_delta_camera.translation[None]
    else:
        # T_CO_test @ S_k @ inverse(T_CO_demo) for all k at once
        s = np.stack(symmetry_rotations(pair.symmetry))
        r_t, t_t = pair.object_pose_test.rotation, pair.object_pose_test.translation
        r_d, t_d = pair.object_pose_demo.rotation, pair.object_pose_demo.translation
        rg = r_t @ s @ r_d.T
        tg = t_t - rg @ t_d
    if frame == "robot":
        r_rc, t_rc = pair.camera.extrinsic.rotation, pair.camera.extrinsic.translation
        rg = r_rc @ rg @ r_rc.T
        tg = tg @ r_rc.T + t_rc - rg @ t_rc
    r_err = rg @ est.rotation.T
    t_err = tg - r_err @ est.translation
    angles = rotation_angle_batch(r_err)
    k = int(np.argmin(angles))
    return PoseError(float(np.linalg.norm(t_err[k])), float(angles[k]), k)
