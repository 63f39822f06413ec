"""Relative pose estimators for unseen objects.

Each estimator maps a scene pair (demo and test clouds in the camera frame)
to ``C_delta``, the camera-frame transform taking the demo object pose to the
test object pose.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import (
    DegenerateConfigurationError,
    EstimationError,
    InsufficientCorrespondencesError,
)
from .scene import Camera, Correspondences, PointCloud, ScenePair, make_correspondences
from .se3 import Transform, as_rng, change_delta_frame, compose, inverse, rot_z
from .transfer import adjust_delta_translation

COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class PoseEstimate:
    delta_camera: Transform
    residual: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.residual >= 0:
            raise ValueError(f"residual must be non-negative, got {self.residual}")


# -- Kabsch ---------------------------------------------------------------------


def _as_pairs(source, target=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source, Correspondences):
        return source.source, source.target
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("source and target must have equal length")
    return src, dst


def kabsch_svd(source, target=None, weights: Optional[np.ndarray] = None) -> Transform:
    """Weighted least-squares rigid transform with ``T @ source ~ target``.

    Accepts either a ``Correspondences`` or two (N, 3) arrays. A reflection in
    the SVD solution is removed by flipping the least significant direction.
    """
    src, dst = _as_pairs(source, target)
    if len(src) < 3:
        raise InsufficientCorrespondencesError(f"Kabsch needs at least 3 pairs, got {len(src)}")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != len(src) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per pair, not all zero")
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    sv = np.linalg.svd(xs * np.sqrt(w)[:, None], compute_uv=False)
    if sv[0] <= 0 or sv[1] <= COLLINEAR_TOL * max(1.0, sv[0]):
        raise DegenerateConfigurationError("source points are collinear or coincident")
    h = (xs * w[:, None]).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Transform(r, mu_d - r @ mu_s)


def _kabsch_batch(src: np.ndarray, dst: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched Kabsch: src, dst (B, M, 3), w (B, M) with 0/1 weights.

    Returns rotations (B, 3, 3), translations (B, 3) and a mask of rows where a
    full rigid solve was possible (>= 3 pairs, not collinear). Rows failing
    the mask get the translation-only update.
    """
    n = w.sum(axis=1)
    safe_n = np.maximum(n, 1.0)
    mu_s = np.einsum("bm,bmi->bi", w, src) / safe_n[:, None]
    mu_d = np.einsum("bm,bmi->bi", w, dst) / safe_n[:, None]
    xs = (src - mu_s[:, None]) * w[..., None]
    yd = dst - mu_d[:, None]
    cov_s = np.einsum("bmi,bmj->bij", xs, xs)
    ev = np.linalg.eigvalsh(cov_s)
    ok = (n >= 3) & (ev[:, 1] > (COLLINEAR_TOL**2) * np.maximum(1.0, ev[:, 2]))
    h = np.einsum("bmi,bmj->bij", xs, yd)
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, 1, 2)
    d = np.sign(np.linalg.det(v @ np.swapaxes(u, 1, 2)))
    d[d == 0] = 1.0
    fix = np.ones((len(d), 3))
    fix[:, 2] = d
    r = (v * fix[:, None, :]) @ np.swapaxes(u, 1, 2)
    r[~ok] = np.eye(3)
    t = mu_d - np.einsum("bij,bj->bi", r, mu_s)
    return r, t, ok


# -- RANSAC ---------------------------------------------------------------------


@dataclass(frozen=True)
class RansacResult:
    inliers: np.ndarray
    transform: Transform
    iterations: int


RANSAC_BATCH = 64


def _sample_triplets(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(count, 3))
    bad = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    while np.any(bad):
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), 3))
        bad = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
    return idx


def ransac_filter(
    correspondences: Correspondences,
    threshold: float = 0.005,
    max_iterations: int = 2000,
    seed=None,
    confidence: float = 0.9999,
    refine_rounds: int = 3,
) -> RansacResult:
    """Hypothesise-and-verify outlier filtering over 3D point pairs.

    Minimal 3-point Kabsch hypotheses are scored by the number of pairs whose
    residual is at most ``threshold``; the largest consensus set (earliest
    hypothesis on ties) is refitted with all its inliers. The refit is then
    used to re-select inliers, a few rounds at most. Hypotheses are evaluated
    in fixed-size batches and the iteration count adapts to the observed
    inlier ratio; both are functions of the seed only.
    """
    src, dst = _as_pairs(correspondences)
    n = len(src)
    if n < 3:
        raise InsufficientCorrespondencesError(f"RANSAC needs at least 3 pairs, got {n}")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    rng = as_rng(seed)
    best_count, best_mask = 0, None
    needed = max_iterations
    done = 0
    while done < min(needed, max_iterations):
        b = min(RANSAC_BATCH, max_iterations - done)
        tri = _sample_triplets(rng, n, b)
        s, d = src[tri], dst[tri]
        r, t, ok = _kabsch_batch(s, d, np.ones((b, 3)))
        res = np.einsum("bij,nj->bni", r, src) + t[:, None, :] - dst[None]
        inl = np.einsum("bni,bni->bn", res, res) <= threshold * threshold
        inl[~ok] = False
        counts = inl.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_mask = int(counts[k]), inl[k].copy()
            ratio = best_count / n
            if ratio >= 1.0:
                needed = done + b
            else:
                needed = int(math.ceil(math.log(1 - confidence) / math.log(1 - ratio**3)))
        done += b
    if best_count < 3:
        raise EstimationError(
            "no hypothesis reached 3 inliers", {"iterations": done, "best_inliers": best_count}
        )
    mask = best_mask
    fit = kabsch_svd(src[mask], dst[mask])
    for _ in range(refine_rounds):
        res = fit.apply(src) - dst
        new_mask = np.einsum("ni,ni->n", res, res) <= threshold * threshold
        if new_mask.sum() < 3 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        fit = kabsch_svd(src[mask], dst[mask])
    return RansacResult(np.nonzero(mask)[0], fit, done)


def estimate_from_correspondences(
    correspondences: Correspondences, threshold: float = 0.005, max_iterations: int = 2000, seed=None
) -> PoseEstimate:
    src, dst = _as_pairs(correspondences)
    if len(src) < 3:
        raise InsufficientCorrespondencesError(f"need at least 3 correspondences, got {len(src)}")
    rr = ransac_filter(correspondences, threshold, max_iterations, seed)
    res = rr.transform.apply(src[rr.inliers]) - dst[rr.inliers]
    rms = float(np.sqrt(np.mean(np.einsum("ni,ni->n", res, res))))
    return PoseEstimate(
        rr.transform,
        rms,
        {"inlier_count": int(len(rr.inliers)), "correspondences": int(len(src)), "iterations": rr.iterations},
    )


# -- centering and ICP -----------------------------------------------------------


def centering_translation(demo: PointCloud | np.ndarray, test: PointCloud | np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Translation aligning cloud centroids after applying ``rotation`` to the demo cloud."""
    a = demo.points if isinstance(demo, PointCloud) else np.asarray(demo, float).reshape(-1, 3)
    b = test.points if isinstance(test, PointCloud) else np.asarray(test, float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("centering needs non-empty clouds")
    return b.mean(axis=0) - rotation @ a.mean(axis=0)


@dataclass(frozen=True)
class IcpConfig:
    """Multi-restart point-to-point ICP settings.

    ``restarts`` is a count budget (reproducible); setting ``time_budget_s``
    switches to a wall-clock budget and ignores the count.
    """

    max_correspondence_distance: float = 0.10
    max_iterations: int = 10
    restarts: int = 100
    time_budget_s: Optional[float] = None
    init_translation_sigma: float = 0.01
    z_rotation_prior: bool = True
    z_rotation_range: float = math.pi / 4
    max_points: Optional[int] = 300

    def __post_init__(self) -> None:
        if not (self.max_correspondence_distance > 0 and self.max_iterations > 0 and self.restarts > 0):
            raise ValueError("ICP distance, iterations and restarts must be positive")
        if self.time_budget_s is not None and not self.time_budget_s > 0:
            raise ValueError("time budget must be positive")
        if self.init_translation_sigma < 0 or self.z_rotation_range < 0:
            raise ValueError("init noise and rotation range must be non-negative")


def _truncated_rms(d: np.ndarray, max_dist: float) -> np.ndarray:
    return np.sqrt(np.mean(np.minimum(d, max_dist) ** 2, axis=-1))


def _icp_batch(
    src: np.ndarray,
    tree: cKDTree,
    target: np.ndarray,
    rot: np.ndarray,
    trans: np.ndarray,
    max_dist: float,
    iterations: int,
    record: bool = False,
):
    """Run ``iterations`` ICP steps for B starts at once; src (M, 3), rot (B, 3, 3), trans (B, 3).

    The objective tracked is the truncated RMS ``sqrt(mean(min(d, D)^2))`` over
    all source points at the current pose; each step cannot increase it.
    """
    b, m = len(rot), len(src)
    history = []
    matched = np.zeros(b, dtype=int)
    for _ in range(iterations):
        x = np.einsum("bij,mj->bmi", rot, src) + trans[:, None, :]
        d, j = tree.query(x.reshape(-1, 3), k=1, distance_upper_bound=max_dist)
        d, j = d.reshape(b, m), j.reshape(b, m)
        keep = np.isfinite(d)
        if record:
            history.append(_truncated_rms(np.where(keep, d, max_dist), max_dist))
        matched = keep.sum(axis=1)
        q = target[np.where(keep, j, 0)]
        dr, dt, _ = _kabsch_batch(x, q, keep.astype(float))
        none = matched == 0
        dr[none], dt[none] = np.eye(3), 0.0
        rot = dr @ rot
        trans = np.einsum("bij,bj->bi", dr, trans) + dt
    x = np.einsum("bij,mj->bmi", rot, src) + trans[:, None, :]
    d, _ = tree.query(x.reshape(-1, 3), k=1, distance_upper_bound=max_dist)
    d = d.reshape(b, m)
    final_matched = np.isfinite(d).sum(axis=1)
    final = _truncated_rms(np.where(np.isfinite(d), d, max_dist), max_dist)
    if record:
        history.append(final)
    return rot, trans, final, final_matched, (np.array(history).T if record else None)


def icp_step(
    source: PointCloud | np.ndarray,
    target: PointCloud | np.ndarray,
    current: Transform,
    max_correspondence_distance: float,
    tree: Optional[cKDTree] = None,
) -> tuple[Transform, float, int]:
    """One point-to-point ICP update composed onto ``current``.

    Returns the updated transform, the truncated RMS objective at ``current``
    (pairs beyond the distance cap count as the cap) and the number of pairs
    within the cap. With fewer than three usable pairs, or collinear ones,
    only the translation is updated.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, float).reshape(-1, 3)
    tgt = target.points if isinstance(target, PointCloud) else np.asarray(target, float).reshape(-1, 3)
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("ICP needs non-empty clouds")
    tree = cKDTree(tgt) if tree is None else tree
    x = current.apply(src)
    d, j = tree.query(x, k=1, distance_upper_bound=max_correspondence_distance)
    keep = np.isfinite(d)
    count = int(keep.sum())
    if count == 0:
        raise EstimationError("no pairs within the correspondence distance", {"matched": 0})
    residual = float(_truncated_rms(np.where(keep, d, max_correspondence_distance), max_correspondence_distance))
    dr, dt, _ = _kabsch_batch(x[None, keep], tgt[j[keep]][None], np.ones((1, count)))
    return compose(Transform(dr[0], dt[0]), current), residual, count


def _camera_z_rotations(camera: Camera, angles: np.ndarray) -> np.ndarray:
    """Rotations about the robot z-axis expressed in the camera frame."""
    r_rc = camera.extrinsic.rotation
    rz = np.stack([rot_z(a) for a in angles])
    return np.einsum("ji,bjk,kl->bil", r_rc, rz, r_rc)


def icp_multirestart(pair: ScenePair, config: IcpConfig = IcpConfig(), seed=None, restart_batch: int = 25) -> PoseEstimate:
    """Best of many ICP runs from z-rotation-prior starts with centred, jittered translation."""
    rng = as_rng(seed)
    src_cloud = pair.demo_cloud.subsample(config.max_points)
    src, tgt = src_cloud.points, pair.test_cloud.points
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("ICP needs non-empty clouds")
    tree = cKDTree(tgt)
    c_demo, c_test = pair.demo_cloud.centroid, pair.test_cloud.centroid
    t_start = time.monotonic()
    best = (math.inf, None, None, -1, 0)
    tried = 0
    while True:
        if config.time_budget_s is None:
            if tried >= config.restarts:
                break
            b = min(restart_batch, config.restarts - tried)
        else:
            if tried > 0 and time.monotonic() - t_start >= config.time_budget_s:
                break
            b = restart_batch
        if config.z_rotation_prior:
            angles = rng.uniform(-config.z_rotation_range, config.z_rotation_range, size=b)
            rot = _camera_z_rotations(pair.camera, angles)
        else:
            rot = np.repeat(np.eye(3)[None], b, axis=0)
        trans = c_test[None] - np.einsum("bij,j->bi", rot, c_demo)
        trans = trans + config.init_translation_sigma * rng.standard_normal((b, 3))
        rot, trans, resid, matched, _ = _icp_batch(
            src, tree, tgt, rot, trans, config.max_correspondence_distance, config.max_iterations
        )
        resid = np.where(matched > 0, resid, np.inf)
        k = int(np.argmin(resid))
        if resid[k] < best[0]:
            best = (float(resid[k]), rot[k], trans[k], tried + k, int(matched[k]))
        tried += b
    if best[1] is None:
        raise EstimationError("every ICP restart failed to match any pair", {"restarts_tried": tried})
    return PoseEstimate(
        Transform(best[1], best[2]),
        best[0],
        {
            "restarts_tried": tried,
            "best_restart": best[3],
            "iterations": config.max_iterations,
            "matched": best[4],
        },
    )


def icp_residual_history(
    source: np.ndarray, target: np.ndarray, start: Transform, max_correspondence_distance: float, iterations: int
) -> np.ndarray:
    """Objective value before each step and after the last, for one start."""
    tree = cKDTree(target)
    *_, hist = _icp_batch(
        np.asarray(source, float),
        tree,
        np.asarray(target, float),
        start.rotation[None],
        start.translation[None],
        max_correspondence_distance,
        iterations,
        record=True,
    )
    return hist[0]


# -- template matching -------------------------------------------------------------


@dataclass(frozen=True)
class TemplateConfig:
    angle_min_deg: float = -44.5
    angle_max_deg: float = 44.5
    angle_step_deg: float = 1.0
    score: str = "geometry+color"
    color_weight: float = 0.1
    trim_fraction: float = 0.8
    max_points: Optional[int] = 1500

    def __post_init__(self) -> None:
        if not self.angle_step_deg > 0 or self.angle_max_deg < self.angle_min_deg:
            raise ValueError("template grid needs step > 0 and max >= min")
        if self.score not in ("geometry-only", "geometry+color"):
            raise ValueError(f"unknown template score {self.score!r}")
        if not 0 < self.trim_fraction <= 1 or self.color_weight < 0:
            raise ValueError("trim fraction must lie in (0, 1] and colour weight be non-negative")

    @property
    def angles_deg(self) -> np.ndarray:
        n = int(round((self.angle_max_deg - self.angle_min_deg) / self.angle_step_deg)) + 1
        return self.angle_min_deg + self.angle_step_deg * np.arange(n)


def template_scores(pair: ScenePair, config: TemplateConfig = TemplateConfig()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score every template angle; returns (angles in degrees, scores, camera-frame rotations)."""
    demo = pair.demo_cloud.subsample(config.max_points)
    test = pair.test_cloud
    if len(demo) == 0 or len(test) == 0:
        raise ValueError("template matching needs non-empty clouds")
    angles = config.angles_deg
    rots = _camera_z_rotations(pair.camera, np.radians(angles))
    c_demo, c_test = pair.demo_cloud.centroid, test.centroid
    tree = cKDTree(test.points)
    use_color = (config.score == "geometry+color" and demo.colors is not None and test.colors is not None)
    keep_n = max(1, int(math.ceil(config.trim_fraction * len(demo))))
    scores = np.empty(len(angles))
    for i, r in enumerate(rots):
        x = (demo.points - c_demo) @ r.T + c_test
        d, j = tree.query(x, k=1)
        order = np.argsort(d, kind="stable")[:keep_n]
        s = math.sqrt(float(np.mean(d[order] ** 2)))
        if use_color:
            s += config.color_weight * float(np.mean(np.linalg.norm(demo.colors[order] - test.colors[j[order]], axis=1)))
        scores[i] = s
    return angles, scores, rots


def z_template_match(pair: ScenePair, config: TemplateConfig = TemplateConfig()) -> PoseEstimate:
    angles, scores, rots = template_scores(pair, config)
    k = int(np.lexsort((np.abs(angles), scores))[0])
    r = rots[k]
    t = centering_translation(pair.demo_cloud, pair.test_cloud, r)
    return PoseEstimate(
        Transform(r, t),
        float(scores[k]),
        {"templates": int(len(angles)), "angle_deg": float(angles[k]), "score_spread": float(scores.max() - scores.min())},
    )


# -- inductive bias -------------------------------------------------------------------


def apply_inductive_bias(estimate: PoseEstimate, camera: Camera, first_demo_pose: Transform) -> PoseEstimate:
    """Restrict the estimate to a robot-z rotation while keeping the first transferred EEF position."""
    t_rc = camera.extrinsic
    r_delta = change_delta_frame(t_rc, estimate.delta_camera)
    adjusted = adjust_delta_translation(r_delta, first_demo_pose)
    c_delta = compose(compose(inverse(t_rc), adjusted), t_rc)
    diag = dict(estimate.diagnostics)
    diag["bias_applied"] = True
    return PoseEstimate(c_delta, estimate.residual, diag)


# -- registry ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrespondenceConfig:
    """Synthetic matcher settings for the ``corr-svd`` estimator plus its RANSAC parameters."""

    count: int = 500
    inlier_ratio: float = 1.0
    inlier_noise_sigma: float = 0.0
    threshold: float = 0.005
    max_iterations: int = 2000


@dataclass(frozen=True)
class EstimatorSuite:
    icp: IcpConfig = IcpConfig()
    template: TemplateConfig = TemplateConfig()
    correspondences: CorrespondenceConfig = CorrespondenceConfig()

    @classmethod
    def from_json(cls, obj: Optional[dict]) -> "EstimatorSuite":
        obj = obj or {}
        try:
            return cls(
                IcpConfig(**obj.get("icp", {})),
                TemplateConfig(**obj.get("template", {})),
                CorrespondenceConfig(**obj.get("corr_svd", {})),
            )
        except TypeError as exc:
            raise ValueError(f"invalid estimator configuration: {exc}") from exc


BASE_ESTIMATORS = ("icp", "corr-svd", "template-z", "gt")
BIAS_SUFFIX = "+bias"

Estimator = Callable[[ScenePair, Optional[int]], PoseEstimate]


def bias_anchor(pair: ScenePair) -> Transform:
    """Stand-in first EEF pose when no trajectory is given: at the demo cloud centroid (robot frame)."""
    return Transform(np.eye(3), pair.camera.extrinsic.apply(pair.demo_cloud.centroid[None])[0])


def estimator_seed(seed: int, *keys) -> np.random.Generator:
    parts = [int(seed)]
    for k in keys:
        parts.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.default_rng(parts)


def parse_estimator_id(name: str) -> tuple[str, bool]:
    base, bias = (name[: -len(BIAS_SUFFIX)], True) if name.endswith(BIAS_SUFFIX) else (name, False)
    if base not in BASE_ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(BASE_ESTIMATORS)} with optional {BIAS_SUFFIX}")
    return base, bias


def run_estimator(
    name: str,
    pair: ScenePair,
    seed=None,
    suite: EstimatorSuite = EstimatorSuite(),
    first_demo_pose: Optional[Transform] = None,
    correspondences: Optional[Correspondences] = None,
) -> PoseEstimate:
    """Run an estimator by string id (``icp``, ``corr-svd``, ``template-z``, ``gt``, optional ``+bias``)."""
    base, bias = parse_estimator_id(name)
    rng = as_rng(seed)
    if base == "gt":
        est = PoseEstimate(pair.true_delta_camera, 0.0, {"oracle": True})
    elif base == "icp":
        est = icp_multirestart(pair, suite.icp, rng)
    elif base == "template-z":
        est = z_template_match(pair, suite.template)
    else:
        cc = suite.correspondences
        if correspondences is None:
            count = min(cc.count, len(pair.demo_cloud))
            correspondences = make_correspondences(pair, count, cc.inlier_ratio, cc.inlier_noise_sigma, rng)
        est = estimate_from_correspondences(correspondences, cc.threshold, cc.max_iterations, rng)
    if bias:
        est = apply_inductive_bias(est, pair.camera, first_demo_pose if first_demo_pose is not None else bias_anchor(pair))
    return est


def with_icp(suite: EstimatorSuite, **changes) -> EstimatorSuite:
    return replace(suite, icp=replace(suite.icp, **changes))
