"""Rigid-body transform algebra on SE(3) and the SO(3) exp/log maps.

Conventions
-----------
``T_AB`` is frame B expressed in frame A, so ``p_A = R_AB @ p_B + t_AB``.
Rotations are stored as 3x3 matrices. All functions are pure; randomized
helpers take an explicit seed or ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateDecompositionError, InvalidRotationError

ORTHO_TOL = 1e-9
REORTHO_DEFECT = 1e-7
NEAR_PI = math.pi - 1e-4
SMALL_ANGLE = 1e-6
GIMBAL_TOL = 1e-6


def as_rng(seed) -> np.random.Generator:
    """Return ``seed`` if it is a Generator, else a fresh seeded one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def orthonormality_defect(r: np.ndarray) -> float:
    return float(np.max(np.abs(r.T @ r - np.eye(3))))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return orthonormality_defect(r) <= tol and abs(np.linalg.det(r) - 1.0) <= tol


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform ``[R | t]``. Immutable; arrays are read-only."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3):
            raise InvalidRotationError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {t.shape}")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotation(cls, r: np.ndarray) -> "Transform":
        return cls(r, np.zeros(3))

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> "Transform":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 homogeneous matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Transform":
        return inverse(self)

    def __matmul__(self, other: "Transform") -> "Transform":
        return compose(self, other)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map a point (3,) or an array of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def to_json(self) -> dict:
        return {
            "r": [[float(x) for x in row] for row in self.rotation],
            "t": [float(x) for x in self.translation],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Transform":
        try:
            return cls(np.array(obj["r"], dtype=float), np.array(obj["t"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed transform object: {obj!r}") from exc

    def __repr__(self) -> str:
        angle = math.degrees(float(np.linalg.norm(log_so3(self.rotation))))
        return f"Transform(angle={angle:.4f}deg, t={np.round(self.translation, 6).tolist()})"


def compose(a: Transform, b: Transform) -> Transform:
    r = a.rotation @ b.rotation
    if orthonormality_defect(r) > REORTHO_DEFECT:
        r = orthonormalize(r)
    return Transform(r, a.rotation @ b.translation + a.translation)


def compose_all(transforms: Iterable[Transform]) -> Transform:
    out = Transform.identity()
    for t in transforms:
        out = compose(out, t)
    return out


def inverse(t: Transform) -> Transform:
    rt = t.rotation.T
    return Transform(rt, -rt @ t.translation)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def exp_so3(v: Sequence[float]) -> np.ndarray:
    """Rodrigues' formula: rotation by ``|v|`` radians about ``v / |v|``."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    k = skew(v)
    if theta < SMALL_ANGLE:
        # second-order Taylor expansion; error O(theta^3)
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(r: np.ndarray) -> np.ndarray:
    """Rotation vector of ``r``; its norm is the geodesic angle in [0, pi]."""
    r = np.asarray(r, dtype=float)
    w = 0.5 * vee(r - r.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (float(np.trace(r)) - 1.0)
    theta = math.atan2(s, c)
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    if theta > NEAR_PI:
        # axis from the symmetric part: (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T
        sym = 0.5 * (r + r.T)
        vals, vecs = np.linalg.eigh(sym)
        axis = vecs[:, int(np.argmax(vals))]
        if float(axis @ w) < 0.0:
            axis = -axis
        return theta * axis
    return (theta / s) * w


def rotation_angle(r: np.ndarray) -> float:
    return float(np.linalg.norm(log_so3(r)))


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance ``|log(a b^T)|`` in radians."""
    return rotation_angle(np.asarray(a) @ np.asarray(b).T)


def random_unit_vectors(n: int, seed=None) -> np.ndarray:
    rng = as_rng(seed)
    v = rng.standard_normal((n, 3))
    norms = np.linalg.norm(v, axis=1)
    # a zero draw has probability zero; redraw defensively
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def random_rotation(magnitude: float, seed=None) -> np.ndarray:
    """Rotation of exactly ``magnitude`` radians about a uniformly random axis."""
    if not 0.0 <= magnitude <= math.pi:
        raise ValueError(f"rotation magnitude must lie in [0, pi], got {magnitude}")
    axis = random_unit_vectors(1, seed)[0]
    return exp_so3(magnitude * axis)


def uniform_random_rotation(seed=None) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    rng = as_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def change_delta_frame(t_rc: Transform, c_delta: Transform) -> Transform:
    """Express a relative object motion given in the camera frame in the robot frame.

    ``R_delta = T_RC @ C_delta @ T_RC^-1``.
    """
    return compose(compose(t_rc, c_delta), inverse(t_rc))


def euler_zyx(r: np.ndarray) -> tuple[float, float, float]:
    """Decompose ``r = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

    Raises DegenerateDecompositionError when the pitch is within
    ``GIMBAL_TOL`` of +-pi/2.
    """
    r = np.asarray(r, dtype=float)
    cos_pitch = math.hypot(r[0, 0], r[1, 0])
    pitch = math.atan2(-r[2, 0], cos_pitch)
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_TOL:
        raise DegenerateDecompositionError(
            f"pitch {pitch:.9f} rad is at gimbal lock; yaw is not unique"
        )
    yaw = math.atan2(r[1, 0], r[0, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll


def project_to_z_rotation(r: np.ndarray) -> np.ndarray:
    """Keep only the yaw of an intrinsic Z-Y-X decomposition (rotation about world z)."""
    yaw, _, _ = euler_zyx(r)
    return rot_z(yaw)


def look_at(eye: Sequence[float], target: Sequence[float], up=(0.0, 0.0, 1.0)) -> Transform:
    """Camera pose ``T_RC`` with optical axis (+z) toward ``target``, +y pointing down."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("look_at: viewing direction is parallel to up")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Transform(np.column_stack([right, down, forward]), eye)


# -- batched helpers (leading axis indexes samples) ---------------------------


def exp_so3_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=1)
    k = np.zeros((len(v), 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -v[:, 2], v[:, 1]
    k[:, 1, 0], k[:, 1, 2] = v[:, 2], -v[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -v[:, 1], v[:, 0]
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3)[None] + a[:, None, None] * k + b[:, None, None] * (k @ k)


def rotation_angle_batch(r: np.ndarray) -> np.ndarray:
    """Geodesic angles of a stack of rotations, via atan2 of antisymmetric/trace parts."""
    r = np.asarray(r, dtype=float)
    w = 0.5 * np.stack(
        [r[:, 2, 1] - r[:, 1, 2], r[:, 0, 2] - r[:, 2, 0], r[:, 1, 0] - r[:, 0, 1]], axis=1
    )
    s = np.linalg.norm(w, axis=1)
    c = 0.5 * (np.trace(r, axis1=1, axis2=2) - 1.0)
    return np.arctan2(s, c)
