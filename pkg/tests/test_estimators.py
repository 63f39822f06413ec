import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_transform, seeds
from trajtransfer.estimators import (
    EstimatorSuite,
    IcpConfig,
    PoseEstimate,
    TemplateConfig,
    apply_inductive_bias,
    centering_translation,
    estimate_from_correspondences,
    icp_multirestart,
    icp_residual_history,
    icp_step,
    kabsch_svd,
    parse_estimator_id,
    ransac_filter,
    run_estimator,
    template_scores,
    z_template_match,
)
from trajtransfer.exceptions import (
    DegenerateConfigurationError,
    EstimationError,
    InsufficientCorrespondencesError,
)
from trajtransfer.metrics import pose_error, symmetry_aware_error
from trajtransfer.scene import (
    Correspondences,
    NoiseOptions,
    PointCloud,
    ScenePair,
    build_object,
    default_camera,
    full_view,
    make_correspondences,
    render_partial_view,
    sample_scene_pair,
    sphere_model,
)
from trajtransfer.se3 import Transform, change_delta_frame, compose, inverse, is_rotation, rot_x, rot_z


def _z_pair(model, theta, noise=NoiseOptions(), seed=0, partial=False):
    """Pair whose test pose is the demo pose turned by ``theta`` about the robot z-axis."""
    cam = default_camera()
    t_ro_demo = Transform(rot_z(0.4), [0.65, 0.05, 0.0])
    t_ro_test = Transform(rot_z(theta) @ t_ro_demo.rotation, [0.62, -0.08, 0.0])
    t_cr = inverse(cam.extrinsic)
    demo, test = compose(t_cr, t_ro_demo), compose(t_cr, t_ro_test)
    view = (lambda p, s: render_partial_view(model, p, cam, noise, s)) if partial else (lambda p, s: full_view(model, p, noise, s))
    return ScenePair(view(demo, seed), view(test, seed + 1), cam, compose(test, inverse(demo)), demo, test,
                     model.symmetry, model.category)


# -- Kabsch -------------------------------------------------------------------------


def test_kabsch_identity_and_known_transform(rng):
    p = rng.normal(size=(100, 3))
    assert kabsch_svd(p, p).allclose(Transform.identity(), 1e-12)
    truth = Transform(rot_z(math.radians(30)), [0.1, 0.0, 0.0])
    assert kabsch_svd(p, truth.apply(p)).allclose(truth, 1e-9)


def test_kabsch_mirrored_planar_has_positive_determinant(rng):
    p = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    m = np.diag([-1.0, 1.0, 1.0])
    r = kabsch_svd(p, p @ m.T).rotation
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_kabsch_integer_weights_equal_duplication(rng):
    p = rng.normal(size=(20, 3))
    q = random_transform(rng).apply(p) + 0.01 * rng.normal(size=(20, 3))
    w = rng.integers(1, 4, size=20)
    dup = kabsch_svd(np.repeat(p, w, axis=0), np.repeat(q, w, axis=0))
    assert kabsch_svd(p, q, weights=w.astype(float)).allclose(dup, 1e-9)


def test_kabsch_errors():
    with pytest.raises(InsufficientCorrespondencesError):
        kabsch_svd(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        kabsch_svd(line, line)
    with pytest.raises(ValueError):
        kabsch_svd(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        kabsch_svd(np.eye(3), np.eye(3), weights=[1.0, -1.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(3, 60))
def test_kabsch_recovery_property(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.3, 0.3, (n, 3))
    truth = random_transform(rng)
    est = kabsch_svd(Correspondences(p, truth.apply(p)))
    assert est.allclose(truth, 1e-9)
    assert is_rotation(est.rotation)


# -- RANSAC and correspondence estimation ------------------------------------------------


@pytest.fixture(scope="module")
def partial_pair():
    return sample_scene_pair(build_object("non-sym", seed=3), default_camera(), seed=21)


def test_ransac_all_inliers_and_minimal(partial_pair, rng):
    corr = make_correspondences(partial_pair, 200, seed=0)
    assert len(ransac_filter(corr, seed=1).inliers) == 200
    three = make_correspondences(partial_pair, 3, seed=3)
    res = ransac_filter(three, seed=0)
    assert sorted(res.inliers.tolist()) == [0, 1, 2]


def test_ransac_deterministic_per_seed(partial_pair):
    corr = make_correspondences(partial_pair, 300, inlier_ratio=0.5, inlier_noise_sigma=0.001, seed=5)
    a, b = ransac_filter(corr, 0.003, seed=9), ransac_filter(corr, 0.003, seed=9)
    assert np.array_equal(a.inliers, b.inliers) and a.iterations == b.iterations
    assert a.transform.allclose(b.transform, 0.0)


def test_ransac_errors():
    line = np.outer(np.arange(6.0), [1.0, 0.0, 0.0])
    with pytest.raises(EstimationError):
        ransac_filter(Correspondences(line, line), seed=0)
    with pytest.raises(InsufficientCorrespondencesError):
        ransac_filter(Correspondences(np.eye(3)[:2], np.eye(3)[:2]))
    with pytest.raises(ValueError):
        ransac_filter(Correspondences(np.eye(3), np.eye(3)), threshold=0.0)


def test_estimate_from_correspondences(partial_pair):
    exact = estimate_from_correspondences(make_correspondences(partial_pair, 300, seed=1), seed=0)
    assert exact.delta_camera.allclose(partial_pair.true_delta_camera, 1e-9)
    assert exact.diagnostics["inlier_count"] == 300
    for s in range(5):
        corr = make_correspondences(partial_pair, 500, 0.7, 0.001, seed=s)
        est = estimate_from_correspondences(corr, threshold=0.003, seed=s)
        err = pose_error(partial_pair.true_delta_camera, est.delta_camera)
        # translation is judged at the object: the camera-frame offset carries the
        # rotation error times the camera distance, even for an oracle inlier fit
        c = corr.source[corr.inlier_mask].mean(axis=0, keepdims=True)
        t_obj = np.linalg.norm(est.delta_camera.apply(c) - partial_pair.true_delta_camera.apply(c))
        assert math.degrees(err.rotation) < 0.5 and t_obj < 0.002
        assert est.residual <= 0.003
    with pytest.raises(InsufficientCorrespondencesError):
        estimate_from_correspondences(Correspondences(np.eye(3)[:2], np.eye(3)[:2]))


# -- centering ------------------------------------------------------------------------


def test_centering_translation(rng):
    p = rng.normal(size=(40, 3))
    d = np.array([0.1, -0.2, 0.3])
    assert np.allclose(centering_translation(p, p + d, np.eye(3)), d, atol=1e-15)
    r = rot_x(0.3) @ rot_z(1.1)
    c = p.mean(axis=0)
    q = (p - c) @ r.T + c + d
    t = Transform(r, centering_translation(PointCloud(p), PointCloud(q), r))
    assert np.sqrt(np.mean(np.sum((t.apply(p) - q) ** 2, axis=1))) <= 1e-9
    with pytest.raises(ValueError):
        centering_translation(np.zeros((0, 3)), p, np.eye(3))


def test_centering_bias_on_partial_sphere_views():
    model = sphere_model(0.05)
    cam = default_camera()
    t_cr = inverse(cam.extrinsic)
    a = compose(t_cr, Transform(np.eye(3), [0.55, -0.3, 0.0]))
    b = compose(t_cr, Transform(np.eye(3), [0.75, 0.3, 0.0]))
    va, vb = render_partial_view(model, a, cam), render_partial_view(model, b, cam)
    t = centering_translation(va, vb, np.eye(3))
    bias = np.linalg.norm(t - (b.translation - a.translation))
    # visible caps shift toward the camera, so the bias is at most the radius
    assert 0.0 < bias < 0.05


# -- ICP ----------------------------------------------------------------------------


def test_icp_step_identity_and_single_point(rng):
    p = rng.normal(size=(50, 3))
    t, resid, n = icp_step(p, p, Transform.identity(), 0.1)
    assert t.allclose(Transform.identity(), 1e-12) and resid == 0.0 and n == 50
    t, _, n = icp_step(np.array([[0.0, 0.0, 0.0]]), np.array([[0.01, 0.02, -0.03]]), Transform.identity(), 0.1)
    assert np.allclose(t.translation, [0.01, 0.02, -0.03], atol=1e-15) and n == 1
    with pytest.raises(EstimationError):
        icp_step(p, p + 10.0, Transform.identity(), 0.1)
    with pytest.raises(ValueError):
        icp_step(np.zeros((0, 3)), p, Transform.identity(), 0.1)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_icp_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    model = build_object(("non-sym", "n-sym", "inf-sym-geo")[seed % 3], seed=seed % 11)
    pair = sample_scene_pair(model, default_camera(), seed=seed, view="full")
    start = compose(random_transform(rng, 0.05), pair.true_delta_camera)
    start = Transform(rot_z(rng.uniform(-0.8, 0.8)) @ start.rotation, start.translation)
    hist = icp_residual_history(pair.demo_cloud.subsample(200).points, pair.test_cloud.points, start, 0.1, 10)
    assert np.all(np.diff(hist) <= 1e-12)


def test_icp_step_matches_history(partial_pair):
    src, tgt = partial_pair.demo_cloud.subsample(100).points, partial_pair.test_cloud.points
    start = Transform(np.eye(3), partial_pair.test_cloud.centroid - partial_pair.demo_cloud.centroid)
    hist = icp_residual_history(src, tgt, start, 0.1, 3)
    cur = start
    for k in range(3):
        cur, resid, _ = icp_step(src, tgt, cur, 0.1)
        assert resid == pytest.approx(hist[k], abs=1e-12)


def test_icp_single_restart_at_ground_truth():
    model = build_object("non-sym", seed=1)
    noise = NoiseOptions(0.001, 0.0)
    pair = sample_scene_pair(model, default_camera(), max_z_rotation=0.0, noise=noise, seed=4, view="full")
    config = IcpConfig(restarts=1, init_translation_sigma=0.0, z_rotation_prior=False, max_points=None)
    est = icp_multirestart(pair, config, seed=0)
    assert est.residual <= 2 * noise.depth_sigma
    assert est.diagnostics["restarts_tried"] == 1


def test_icp_deterministic_and_budgeted(partial_pair):
    config = IcpConfig(restarts=30)
    a, b = icp_multirestart(partial_pair, config, seed=3), icp_multirestart(partial_pair, config, seed=3)
    assert np.array_equal(a.delta_camera.matrix, b.delta_camera.matrix) and a.residual == b.residual
    assert a.diagnostics["restarts_tried"] == 30
    assert is_rotation(a.delta_camera.rotation)
    timed = icp_multirestart(partial_pair, IcpConfig(time_budget_s=0.01), seed=0)
    assert timed.diagnostics["restarts_tried"] >= 1
    with pytest.raises(ValueError):
        IcpConfig(restarts=0)


def test_icp_defaults():
    c = IcpConfig()
    assert (c.max_correspondence_distance, c.max_iterations, c.init_translation_sigma, c.z_rotation_prior) == (0.10, 10, 0.01, True)


# -- templates ------------------------------------------------------------------------


def test_template_grid_defaults():
    cfg = TemplateConfig()
    angles = cfg.angles_deg
    assert len(angles) == 90 and angles[0] == -44.5 and angles[-1] == 44.5
    with pytest.raises(ValueError):
        TemplateConfig(angle_step_deg=0.0)
    with pytest.raises(ValueError):
        TemplateConfig(score="learned")


def test_template_on_grid_is_exact():
    model = build_object("non-sym", seed=2)
    pair = _z_pair(model, math.radians(17.5))
    est = z_template_match(pair)
    assert est.diagnostics["angle_deg"] == 17.5
    err = pose_error(pair.true_delta_camera, est.delta_camera)
    assert err.rotation < 1e-9 and err.translation < 1e-9


def test_template_off_grid_half_bin():
    model = build_object("non-sym", seed=5)
    pair = _z_pair(model, math.radians(17.3))
    err = pose_error(pair.true_delta_camera, z_template_match(pair).delta_camera)
    assert math.degrees(err.rotation) <= 0.5 + 1e-6


def test_template_inf_sym_scores_flat():
    model = build_object("inf-sym", seed=1)
    noise = NoiseOptions(0.001, 0.0)
    pair = _z_pair(model, math.radians(-20.0), noise)
    _, scores, _ = template_scores(pair, TemplateConfig(score="geometry-only"))
    assert scores.max() - scores.min() < noise.depth_sigma
    est = z_template_match(pair)
    assert math.degrees(symmetry_aware_error(pair, est.delta_camera).rotation) <= 0.5 + 1e-9


def test_template_ties_prefer_small_angles():
    cam = default_camera()
    cloud = PointCloud(np.array([[0.0, 0.0, 0.8]]))
    pair = ScenePair(cloud, cloud, cam)
    est = z_template_match(pair)
    assert abs(est.diagnostics["angle_deg"]) == 0.5


def test_template_colour_term_changes_scores():
    model = build_object("inf-sym-geo", seed=0)
    pair = _z_pair(model, math.radians(30.0))
    _, geo, _ = template_scores(pair, TemplateConfig(score="geometry-only"))
    _, col, _ = template_scores(pair, TemplateConfig())
    assert np.all(col >= geo) and np.any(col > geo)


# -- inductive bias ------------------------------------------------------------------


def test_bias_fixed_point_identity_and_idempotence(rng):
    cam = default_camera()
    t_rc = cam.extrinsic
    first = random_transform(rng, 0.5)
    z_only = compose(compose(inverse(t_rc), Transform(rot_z(0.7), [0.1, 0.2, 0.0])), t_rc)
    out = apply_inductive_bias(PoseEstimate(z_only, 0.0), cam, first)
    assert out.delta_camera.allclose(z_only, 1e-9)
    ident = apply_inductive_bias(PoseEstimate(Transform.identity(), 0.0), cam, first)
    assert ident.delta_camera.allclose(Transform.identity(), 1e-9)
    est = PoseEstimate(random_transform(rng, 0.2), 0.1)
    once = apply_inductive_bias(est, cam, first)
    twice = apply_inductive_bias(once, cam, first)
    assert twice.delta_camera.allclose(once.delta_camera, 1e-9)
    assert once.diagnostics["bias_applied"] and once.residual == 0.1
    r = change_delta_frame(t_rc, once.delta_camera).rotation
    assert abs(r[2, 2] - 1.0) < 1e-12


# -- registry -------------------------------------------------------------------------


def test_estimator_ids_and_registry(partial_pair):
    assert parse_estimator_id("icp+bias") == ("icp", True)
    with pytest.raises(ValueError):
        parse_estimator_id("nope")
    gt = run_estimator("gt", partial_pair)
    assert gt.delta_camera.allclose(partial_pair.true_delta_camera, 0.0)
    biased = run_estimator("gt+bias", partial_pair)
    assert biased.diagnostics["bias_applied"]
    cs = run_estimator("corr-svd", partial_pair, seed=1)
    assert cs.delta_camera.allclose(partial_pair.true_delta_camera, 1e-9)
    for name in ("template-z", "icp", "corr-svd+bias"):
        est = run_estimator(name, partial_pair, seed=2, suite=EstimatorSuite(icp=IcpConfig(restarts=5)))
        assert is_rotation(est.delta_camera.rotation) and est.residual >= 0


def test_suite_from_json():
    suite = EstimatorSuite.from_json({"icp": {"restarts": 7}, "corr_svd": {"inlier_ratio": 0.5}})
    assert suite.icp.restarts == 7 and suite.correspondences.inlier_ratio == 0.5
    with pytest.raises(ValueError):
        EstimatorSuite.from_json({"icp": {"bogus": 1}})


def test_pose_estimate_rejects_negative_residual():
    with pytest.raises(ValueError):
        PoseEstimate(Transform.identity(), -1.0)
