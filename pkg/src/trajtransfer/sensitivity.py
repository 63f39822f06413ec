"""Monte-Carlo propagation of calibration and pose-estimation errors into end-effector start errors.

A sweep draws demonstration end-effector poses at a given distance from the
camera and random relative object motions, transfers the start pose with
clean and with perturbed inputs, and records the start-pose error. Error maps
invert that relation per distance; success curves push a success-vs-error
profile through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .exceptions import FitError
from .se3 import (
    Transform,
    change_delta_frame,
    compose,
    exp_so3_batch,
    random_unit_vectors,
    rotation_angle_batch,
)
from .transfer import eef_start_error

TARGETS = ("calibration-rotation", "calibration-translation", "pose-rotation", "pose-translation")
DEFAULT_DISTANCES = tuple(round(0.2 + 0.1 * i, 10) for i in range(11))
DEFAULT_ROTATION_MAGNITUDES = tuple(math.radians(0.5 * i) for i in range(21))
DEFAULT_TRANSLATION_MAGNITUDES = tuple(round(0.005 * i, 10) for i in range(21))


def _check_target(target: str) -> None:
    if target not in TARGETS:
        raise ValueError(f"unknown noise target {target!r}; expected one of {TARGETS}")


def is_rotation_target(target: str) -> bool:
    return target.endswith("rotation")


def default_magnitudes(target: str) -> tuple[float, ...]:
    _check_target(target)
    return DEFAULT_ROTATION_MAGNITUDES if is_rotation_target(target) else DEFAULT_TRANSLATION_MAGNITUDES


@dataclass(frozen=True)
class NoiseSpec:
    """One perturbation: the target quantity and its exact magnitude (rad or m)."""

    target: str
    magnitude: float

    def __post_init__(self) -> None:
        _check_target(self.target)
        if not self.magnitude >= 0:
            raise ValueError("noise magnitude must be non-negative")
        if is_rotation_target(self.target) and self.magnitude > math.pi:
            raise ValueError("rotation noise magnitude must not exceed pi")


@dataclass(frozen=True)
class SweepConfig:
    distances: tuple[float, ...] = DEFAULT_DISTANCES
    magnitudes: Optional[tuple[float, ...]] = None
    samples_per_cell: int = 1000
    delta_rotation_range: float = math.radians(45.0)
    delta_translation_range: float = 0.4
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        if self.magnitudes is not None:
            object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
            if not self.magnitudes or min(self.magnitudes) < 0:
                raise ValueError("magnitude grid must be non-empty and non-negative")
        if not self.distances or min(self.distances) <= 0:
            raise ValueError("distance grid must be non-empty and positive")
        if self.samples_per_cell < 1:
            raise ValueError("samples_per_cell must be at least 1")
        if not 0 <= self.delta_rotation_range <= math.pi or self.delta_translation_range < 0:
            raise ValueError("invalid relative-motion ranges")

    def magnitudes_for(self, target: str) -> tuple[float, ...]:
        return self.magnitudes if self.magnitudes is not None else default_magnitudes(target)


# -- single-sample route ----------------------------------------------------------------


def perturb(t_rc: Transform, c_delta: Transform, noise: NoiseSpec, direction: np.ndarray) -> tuple[Transform, Transform]:
    """Apply ``noise`` along the unit ``direction`` (rotation axis or translation direction)."""
    direction = np.asarray(direction, dtype=float)
    if noise.target == "calibration-rotation":
        r_eps = exp_so3_batch((noise.magnitude * direction)[None])[0]
        return Transform(r_eps @ t_rc.rotation, t_rc.translation), c_delta
    if noise.target == "calibration-translation":
        return Transform(t_rc.rotation, t_rc.translation + noise.magnitude * direction), c_delta
    if noise.target == "pose-rotation":
        r_eps = exp_so3_batch((noise.magnitude * direction)[None])[0]
        return t_rc, Transform(r_eps @ c_delta.rotation, c_delta.translation)
    return t_rc, Transform(c_delta.rotation, c_delta.translation + noise.magnitude * direction)


def propagate_noise(t_rc: Transform, demo_pose: Transform, delta: Transform, noise: NoiseSpec, seed=None) -> tuple[float, float]:
    """Start-pose error (m, rad) caused by one random perturbation of the given magnitude."""
    direction = random_unit_vectors(1, seed)[0]
    truth = compose(change_delta_frame(t_rc, delta), demo_pose)
    noisy_rc, noisy_delta = perturb(t_rc, delta, noise, direction)
    estimate = compose(change_delta_frame(noisy_rc, noisy_delta), demo_pose)
    return eef_start_error(truth, estimate)


# -- batched sweep --------------------------------------------------------------------------


def _random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )


def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class CellDraws:
    """Random inputs of one sweep cell: demo poses (camera frame), relative motions, noise directions."""

    demo_rot_c: np.ndarray
    demo_pos_c: np.ndarray
    delta_rot: np.ndarray
    delta_trans: np.ndarray
    noise_dir: np.ndarray


def draw_cell(rng: np.random.Generator, distance: float, n: int, rot_range: float, trans_range: float) -> CellDraws:
    """Demo EEF: uniform orientation; position on the front hemisphere of radius ``distance`` about the camera."""
    rot = _random_rotations(rng, n)
    pos = _unit(rng, n)
    pos[:, 2] = np.abs(pos[:, 2])
    pos *= distance
    d_rot = exp_so3_batch(_unit(rng, n) * rng.uniform(0.0, rot_range, size=(n, 1)))
    d_trans = _unit(rng, n) * rng.uniform(0.0, trans_range, size=(n, 1))
    return CellDraws(rot, pos, d_rot, d_trans, _unit(rng, n))


def _delta_robot(r_rc, t_rc, dr, dt):
    """Robot-frame relative pose ``T_RC C T_RC^-1`` for stacks of calibrations and motions."""
    r_rct = np.swapaxes(r_rc, -1, -2)
    rot = r_rc @ dr @ r_rct
    trans = np.einsum("...ij,...j->...i", r_rc, dt) + t_rc - np.einsum("...ij,...j->...i", rot, t_rc)
    return rot, trans


def propagate_cell(t_rc: Transform, draws: CellDraws, target: str, magnitude: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised start-pose errors (m, rad) for every sample of a cell."""
    _check_target(target)
    n = len(draws.demo_pos_c)
    r_rc = np.broadcast_to(t_rc.rotation, (n, 3, 3))
    t_rc_v = np.broadcast_to(t_rc.translation, (n, 3))
    demo_rot = r_rc @ draws.demo_rot_c
    demo_pos = draws.demo_pos_c @ t_rc.rotation.T + t_rc.translation

    def transfer(rr, tt, dr, dt):
        rot, trans = _delta_robot(rr, tt, dr, dt)
        return rot @ demo_rot, np.einsum("nij,nj->ni", rot, demo_pos) + trans

    true_r, true_t = transfer(r_rc, t_rc_v, draws.delta_rot, draws.delta_trans)
    rr, tt, dr, dt = r_rc, t_rc_v, draws.delta_rot, draws.delta_trans
    if is_rotation_target(target):
        r_eps = exp_so3_batch(magnitude * draws.noise_dir)
        if target == "calibration-rotation":
            rr = r_eps @ r_rc
        else:
            dr = r_eps @ draws.delta_rot
    elif target == "calibration-translation":
        tt = t_rc_v + magnitude * draws.noise_dir
    else:
        dt = draws.delta_trans + magnitude * draws.noise_dir
    est_r, est_t = transfer(rr, tt, dr, dt)
    t_err = np.linalg.norm(true_t - est_t, axis=1)
    r_err = rotation_angle_batch(true_r @ np.swapaxes(est_r, 1, 2))
    return t_err, r_err


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Per-sample errors with shape (distances, magnitudes, samples)."""

    target: str
    distances: np.ndarray
    magnitudes: np.ndarray
    t_err: np.ndarray
    r_err: np.ndarray
    seed: int = 0

    def summary_rows(self) -> list[tuple]:
        rows = []
        for i, d in enumerate(self.distances):
            for j, m in enumerate(self.magnitudes):
                te, re = self.t_err[i, j], self.r_err[i, j]
                rows.append((float(d), float(m), float(te.mean()), float(te.std()), float(re.mean()), float(re.std())))
        return rows

    @property
    def mean_t_err(self) -> np.ndarray:
        return self.t_err.mean(axis=2)


SWEEP_HEADER = ("distance_m", "magnitude", "mean_t_err_m", "std_t_err_m", "mean_r_err_rad", "std_r_err_rad")


def cell_rng(seed: int, target: str, cell: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), TARGETS.index(target), int(cell)])


def run_sweep(config: SweepConfig, target: str, t_rc: Optional[Transform] = None, executor=None) -> SweepResult:
    """Errors for every (distance, magnitude) cell; each cell has its own seed-derived generator.

    ``executor`` (any object with an order-preserving ``map``) may evaluate
    cells concurrently; results are independent of scheduling.
    """
    _check_target(target)
    if t_rc is None:
        from .scene import default_camera

        t_rc = default_camera().extrinsic
    mags = np.array(config.magnitudes_for(target), dtype=float)
    if is_rotation_target(target) and mags.max() > math.pi:
        raise ValueError("rotation magnitudes must not exceed pi")
    dists = np.array(config.distances, dtype=float)
    cells = [(i, j) for i in range(len(dists)) for j in range(len(mags))]

    def one(idx: int):
        i, j = cells[idx]
        rng = cell_rng(config.seed, target, idx)
        draws = draw_cell(rng, dists[i], config.samples_per_cell, config.delta_rotation_range, config.delta_translation_range)
        return propagate_cell(t_rc, draws, target, mags[j])

    mapper = map if executor is None else executor.map
    results = list(mapper(one, range(len(cells))))
    shape = (len(dists), len(mags), config.samples_per_cell)
    t_err = np.stack([r[0] for r in results]).reshape(shape)
    r_err = np.stack([r[1] for r in results]).reshape(shape)
    return SweepResult(target, dists, mags, t_err, r_err, config.seed)


# -- error maps -----------------------------------------------------------------------------


def _hat_weights(grid: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the left node and the linear weight of the right node, with clamping."""
    x = np.clip(x, grid[0], grid[-1])
    k = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, len(grid) - 2)
    w = (x - grid[k]) / (grid[k + 1] - grid[k])
    return k, w


def _second_difference(n: int) -> np.ndarray:
    d = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        d[i, i : i + 3] = (1.0, -2.0, 1.0)
    return d


@dataclass(frozen=True, eq=False)
class ErrorMap:
    """Piecewise-bilinear map (distance, eef position error) -> noise magnitude on a node grid."""

    target: str
    distance_grid: np.ndarray
    error_grid: np.ndarray
    values: np.ndarray

    def evaluate(self, distance: float, eef_error: float) -> tuple[float, bool]:
        """Interpolated noise magnitude, and whether the query was clamped into the domain."""
        clamped = not (
            self.distance_grid[0] <= distance <= self.distance_grid[-1]
            and self.error_grid[0] <= eef_error <= self.error_grid[-1]
        )
        i, wi = _hat_weights(self.distance_grid, np.array([distance], float))
        j, wj = _hat_weights(self.error_grid, np.array([eef_error], float))
        i, wi, j, wj = int(i[0]), float(wi[0]), int(j[0]), float(wj[0])
        v = self.values
        val = (
            (1 - wi) * (1 - wj) * v[i, j]
            + (1 - wi) * wj * v[i, j + 1]
            + wi * (1 - wj) * v[i + 1, j]
            + wi * wj * v[i + 1, j + 1]
        )
        return float(val), clamped

    def rows(self) -> list[tuple]:
        return [
            (float(d), float(e), float(self.values[i, j]))
            for i, d in enumerate(self.distance_grid)
            for j, e in enumerate(self.error_grid)
        ]


ERROR_MAP_HEADER = ("distance_m", "eef_position_error_m", "noise_magnitude")


def fit_error_map(
    sweep: SweepResult,
    error_nodes: Optional[int] = None,
    smoothing: float = 1e-6,
) -> ErrorMap:
    """Least-squares bilinear fit of noise magnitude over (distance, mean eef position error).

    The node grid takes the sweep distances and ``error_nodes`` evenly spaced
    error levels spanning the observed means. A small second-difference
    penalty fills nodes without data (it vanishes on linear data). Values are
    then made non-decreasing along the error axis with isotonic regression.
    """
    dists = np.asarray(sweep.distances, float)
    mags = np.asarray(sweep.magnitudes, float)
    means = sweep.mean_t_err
    if len(dists) < 2 or len(mags) < 2:
        raise FitError("error map needs at least two distances and two magnitudes")
    lo, hi = float(means.min()), float(means.max())
    if not hi > lo:
        raise FitError("degenerate sample table: eef errors do not vary")
    n_e = error_nodes or len(mags)
    if n_e < 2:
        raise FitError("need at least two error nodes")
    e_grid = np.linspace(lo, hi, n_e)
    n_d = len(dists)
    rows_i = np.repeat(np.arange(n_d), len(mags))
    x_e = means.reshape(-1)
    y = np.tile(mags, n_d)
    j, wj = _hat_weights(e_grid, x_e)
    a = np.zeros((len(y), n_d * n_e))
    r = np.arange(len(y))
    a[r, rows_i * n_e + j] = 1.0 - wj
    a[r, rows_i * n_e + j + 1] += wj
    scale = math.sqrt(smoothing) * max(1.0, float(np.abs(a).sum(axis=0).max()))
    pen = []
    de = _second_difference(n_e)
    for i in range(n_d):
        block = np.zeros((len(de), n_d * n_e))
        block[:, i * n_e : (i + 1) * n_e] = de
        pen.append(block)
    dd = _second_difference(n_d)
    for k in range(n_e):
        block = np.zeros((len(dd), n_d * n_e))
        block[:, k::n_e] = dd
        pen.append(block)
    p = np.vstack(pen) * scale if pen else np.zeros((0, n_d * n_e))
    sol, *_ = np.linalg.lstsq(np.vstack([a, p]), np.concatenate([y, np.zeros(len(p))]), rcond=None)
    values = sol.reshape(n_d, n_e)
    values = np.stack([isotonic_regression(row, increasing=True).x for row in values])
    return ErrorMap(sweep.target, dists, e_grid, values)


# -- success profiles and curves --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuccessProfile:
    """Success rate as a function of start position error (m), linearly interpolated and clamped."""

    errors: np.ndarray
    rates: np.ndarray
    label: str = ""
    synthetic: bool = False

    def __post_init__(self) -> None:
        e = np.asarray(self.errors, dtype=float).reshape(-1)
        r = np.asarray(self.rates, dtype=float).reshape(-1)
        if len(e) == 0 or len(e) != len(r):
            raise ValueError("profile needs equal-length, non-empty error and rate columns")
        if np.any(np.diff(e) <= 0):
            raise ValueError("profile error column must be strictly increasing")
        if np.any((r < 0) | (r > 1)) or np.any(e < 0):
            raise ValueError("success rates must lie in [0, 1] and errors be non-negative")
        object.__setattr__(self, "errors", e)
        object.__setattr__(self, "rates", r)

    def __call__(self, err) -> np.ndarray:
        return np.interp(err, self.errors, self.rates)

    @classmethod
    def from_rows(cls, header: Sequence[str], rows: Sequence[Sequence[str]], label: str = "") -> "SuccessProfile":
        if list(header)[:2] != ["eef_position_error_m", "success_rate"]:
            raise ValueError("profile CSV header must be 'eef_position_error_m,success_rate'")
        try:
            data = np.array([[float(r[0]), float(r[1])] for r in rows], dtype=float)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed profile row: {exc}") from exc
        if len(data) == 0:
            raise ValueError("profile CSV has no rows")
        return cls(data[:, 0], data[:, 1], label)


def sigmoid_fixture(midpoint: float = 0.01, width: float = 0.002, max_error: float = 0.04) -> SuccessProfile:
    """SYNTHETIC logistic profile (not measured data): 50% success at ``midpoint`` metres."""
    e = np.round(np.arange(0.0, max_error + 1e-12, 0.001), 10)
    r = 1.0 / (1.0 + np.exp((e - midpoint) / width))
    return SuccessProfile(e, r, label="synthetic-sigmoid", synthetic=True)


def map_success_curve(
    profile: SuccessProfile,
    target: str,
    distance: float = 0.8,
    magnitudes: Optional[Sequence[float]] = None,
    samples: int = 1000,
    seed: int = 0,
    t_rc: Optional[Transform] = None,
    config: SweepConfig = SweepConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Expected success per noise magnitude by forward simulation at one camera distance.

    The raw averages are projected onto non-increasing sequences.
    """
    mags = tuple(magnitudes) if magnitudes is not None else default_magnitudes(target)
    cfg = SweepConfig(
        (distance,), mags, samples, config.delta_rotation_range, config.delta_translation_range, seed
    )
    sweep = run_sweep(cfg, target, t_rc)
    raw = profile(sweep.t_err[0]).mean(axis=1)
    return np.asarray(mags, float), isotonic_regression(raw, increasing=False).x


def remap_profile(profile: SuccessProfile, error_map: ErrorMap, distance: float, magnitudes: Sequence[float]) -> np.ndarray:
    """Map route: read the eef error off the fitted map for each magnitude, then look up success."""
    e_fine = np.linspace(error_map.error_grid[0], error_map.error_grid[-1], 2001)
    vals = np.array([error_map.evaluate(distance, e)[0] for e in e_fine])
    vals = np.maximum.accumulate(vals)
    out = []
    for m in magnitudes:
        if m <= vals[0]:
            e = e_fine[0] if vals[0] > 0 else 0.0
        elif m >= vals[-1]:
            e = e_fine[-1]
        else:
            k = int(np.searchsorted(vals, m, side="left"))
            e0, e1, v0, v1 = e_fine[k - 1], e_fine[k], vals[k - 1], vals[k]
            e = e0 + (m - v0) / (v1 - v0) * (e1 - e0) if v1 > v0 else e0
        out.append(float(profile(e)))
    return isotonic_regression(np.array(out), increasing=False).x


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; defined as 0 when either input is constant."""
    from scipy.stats import spearmanr

    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)
