import numpy as np
import pytest

import stereo_pose.posesolve as posesolve
from stereo_pose.errors import ConfigurationError, DegenerateConfigurationError, InsufficientDataError, NumericError, ValidationError
from stereo_pose.estimate_ds import inject_noise
from stereo_pose.geometry import LEFT, RIGHT, Pose, backproject_pixels, project_points, random_rotation, rot_x, rot_z, rotation_geodesic
from stereo_pose.posesolve import (
    CorrespondenceSet,
    FrameInputs,
    FusionStrategy,
    PoseEstimate,
    SolverParams,
    consistent_lifts,
    disparity_3d3d_solve,
    estimate,
    fuse_late,
    joint_stereo_pnp,
    kabsch_align,
    pnp_solve,
    pose_residuals,
    refine_pose,
)
from stereo_pose.rasterizer import DenseFeatureMaps, render_scene
from stereo_pose.stereomatch import DisparityMap, disparity_from_depth


def _gt_pose(rng:np.random.Generator, depth:float=800.0) -> Pose:
    return Pose(random_rotation(rng), np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), depth]))


def _object_points(rng:np.random.Generator, n:int, half:float=50.0) -> np.ndarray:
    return rng.uniform(-half, half, size=(n, 3))


def _correspondences(pose:Pose, points:np.ndarray, K, view:int=LEFT, extrinsic:Pose=None, sigma:float=0.0, rng=None) -> CorrespondenceSet:

    cam = pose.apply(points) if extrinsic is None else extrinsic.compose(pose).apply(points)
    pixels = project_points(cam, K)
    if sigma > 0:
        pixels = pixels + rng.normal(0.0, sigma, size=pixels.shape)

    return CorrespondenceSet(pixels, points, views=np.full(len(points), view, dtype=np.int8))


def _stereo_frame(rng:np.random.Generator, rig, n:int=60, depth:float=800.0, disparity_sigma:float=0.0):

    """Integer left pixels with known depth, the matching right pixels and a disparity map."""

    K = rig.left
    gt = Pose(random_rotation(rng), np.array([5.0, -5.0, depth]))

    flat = rng.choice(121 * 121, size=n, replace=False)
    pixels = np.stack([K.cx - 60 + flat % 121, K.cy - 60 + flat // 121], axis=1).astype(np.float64)
    pixels = np.round(pixels)
    Z = depth + rng.uniform(-40.0, 40.0, size=n)

    cam = backproject_pixels(pixels, Z, K)
    obj = gt.invert().apply(cam)

    left = CorrespondenceSet(pixels, obj)
    right = CorrespondenceSet(project_points(rig.extrinsic_l2r.apply(cam), rig.right), obj, views=np.full(n, RIGHT, dtype=np.int8))

    values = np.zeros((K.height, K.width))
    valid = np.zeros((K.height, K.width), dtype=bool)
    rows, cols = pixels[:, 1].astype(int), pixels[:, 0].astype(int)
    values[rows, cols] = K.fx * rig.baseline / Z
    if disparity_sigma > 0:
        values[rows, cols] += rng.normal(0.0, disparity_sigma, size=n)
    valid[rows, cols] = True
    disparity = DisparityMap(values=values, valid=valid, confidence=valid.astype(np.float64))

    return gt, FrameInputs(left=left, rig=rig, right=right, disparity=disparity)


def _assert_recovered(est_pose:Pose, gt:Pose, rot_tol:float=1e-6, trans_tol:float=1e-3) -> None:
    assert rotation_geodesic(est_pose.rotation, gt.rotation) < rot_tol
    assert np.linalg.norm(est_pose.translation - gt.translation) < trans_tol


def test_pnp_cube_corners(K, rng):
    gt = _gt_pose(rng, 1000.0)
    corners = np.array([[x, y, z] for x in (-50, 50) for y in (-50, 50) for z in (-50, 50)], dtype=np.float64)

    est = pnp_solve(_correspondences(gt, corners, K), K)

    _assert_recovered(est.pose, gt)
    assert est.inlier_count == 8 and est.converged


def test_pnp_needs_four_points(K, rng):
    gt = _gt_pose(rng)
    with pytest.raises(InsufficientDataError):
        pnp_solve(_correspondences(gt, _object_points(rng, 3), K), K)


def test_pnp_rejects_collinear_points(K, rng):
    gt = _gt_pose(rng)
    line = np.outer(np.linspace(-50, 50, 10), [1.0, 0.5, 0.2])
    with pytest.raises(DegenerateConfigurationError):
        pnp_solve(_correspondences(gt, line, K), K)


def test_pnp_rejects_pixels_outside_image(K, rng):
    gt = _gt_pose(rng)
    corrs = _correspondences(gt, _object_points(rng, 10), K)
    corrs.pixels[0] = [-50.0, 10.0]

    with pytest.raises(ValidationError):
        pnp_solve(corrs, K)


def test_pnp_with_outliers(K):

    # 30% uniform outliers, 1 px noise on the rest
    points = _object_points(np.random.default_rng(0), 200)
    diameter = 100.0 * np.sqrt(3.0)

    successes = 0
    for trial in range(200):

        rng = np.random.default_rng(100 + trial)
        gt = _gt_pose(rng, 500.0)
        inliers = _correspondences(gt, _object_points(rng, 70), K, sigma=1.0, rng=rng)
        outlier_px = np.stack([rng.uniform(0, K.width - 1, 30), rng.uniform(0, K.height - 1, 30)], axis=1)
        outliers = CorrespondenceSet(outlier_px, _object_points(rng, 30))

        est = pnp_solve(inliers.concat(outliers), K, SolverParams(seed=trial))

        add = np.linalg.norm(est.pose.apply(points) - gt.apply(points), axis=1).mean()
        successes += int(add < 0.1 * diameter)

    assert successes >= 190


def test_joint_stereo_noiseless(rig, rng):
    gt = _gt_pose(rng)
    points = _object_points(rng, 40)
    corrs = _correspondences(gt, points[:20], rig.left).concat(
        _correspondences(gt, points[20:], rig.right, view=RIGHT, extrinsic=rig.extrinsic_l2r)
    )

    est = joint_stereo_pnp(corrs, rig)

    _assert_recovered(est.pose, gt)


def test_joint_stereo_without_right_view_equals_mono(rig, rng):
    gt = _gt_pose(rng)
    corrs = _correspondences(gt, _object_points(rng, 30), rig.left, sigma=0.5, rng=rng)
    params = SolverParams(seed=5)

    joint = joint_stereo_pnp(corrs, rig, params)
    mono = pnp_solve(corrs, rig.left, params)

    np.testing.assert_array_equal(joint.pose.rotation, mono.pose.rotation)
    np.testing.assert_array_equal(joint.pose.translation, mono.pose.translation)
    assert joint.inlier_count == mono.inlier_count


def test_joint_stereo_right_residuals_are_consistent(rig, rng):
    gt = _gt_pose(rng)
    points = _object_points(rng, 40)
    corrs = _correspondences(gt, points[:20], rig.left, sigma=1.0, rng=rng).concat(
        _correspondences(gt, points[20:], rig.right, view=RIGHT, extrinsic=rig.extrinsic_l2r, sigma=1.0, rng=rng)
    )

    est = joint_stereo_pnp(corrs, rig)

    right = corrs.views == RIGHT
    reprojected = project_points(rig.extrinsic_l2r.compose(est.pose).apply(corrs.points[right]), rig.right)
    expected = np.linalg.norm(reprojected - corrs.pixels[right], axis=1)
    np.testing.assert_allclose(est.residuals[right], expected, atol=1e-9)


@pytest.mark.slow
def test_stereo_constrains_depth_better_than_mono(rig):

    mono_err, joint_err = [], []

    for trial in range(500):

        rng = np.random.default_rng(trial)
        gt = _gt_pose(rng, 1000.0)
        points = _object_points(rng, 30, half=40.0)
        noise_l = rng.normal(0.0, 2.0, size=(30, 2))
        noise_r = rng.normal(0.0, 2.0, size=(30, 2))

        left = CorrespondenceSet(project_points(gt.apply(points), rig.left) + noise_l, points)
        right = CorrespondenceSet(
            project_points(rig.extrinsic_l2r.compose(gt).apply(points), rig.right) + noise_r, points,
            views=np.full(30, RIGHT, dtype=np.int8),
        )
        params = SolverParams(seed=trial)

        mono_err.append(abs(pnp_solve(left, rig.left, params).pose.translation[2] - gt.translation[2]))
        joint_err.append(abs(joint_stereo_pnp(left.concat(right), rig, params).pose.translation[2] - gt.translation[2]))

    assert np.median(joint_err) < np.median(mono_err)


def test_kabsch_exact_recovery(rng):
    gt = _gt_pose(rng)
    obj = _object_points(rng, 20)
    est = kabsch_align(np.stack([obj, gt.apply(obj)], axis=1))

    assert est.pose.allclose(gt, atol=1e-9)
    assert est.mean_residual_mm < 1e-9


def test_kabsch_identity(rng):
    obj = _object_points(rng, 10)
    est = kabsch_align(np.stack([obj, obj], axis=1))

    assert est.pose.allclose(Pose.identity(), atol=1e-9)


def test_kabsch_degenerate_inputs(rng):
    line = np.outer(np.linspace(0, 1, 6), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        kabsch_align(np.stack([line, line], axis=1))

    obj = _object_points(rng, 2)
    with pytest.raises(DegenerateConfigurationError):
        kabsch_align(np.stack([obj, obj], axis=1))


def test_kabsch_ransac_rejects_outliers(rng):
    gt = _gt_pose(rng)
    obj = _object_points(rng, 50)
    cam = gt.apply(obj)
    cam[:10] += rng.uniform(50.0, 100.0, size=(10, 3))

    est = kabsch_align(np.stack([obj, cam], axis=1), ransac=True)

    assert est.inlier_count == 40
    assert est.pose.allclose(gt, atol=1e-6)


def test_disparity_solve_exact(rig, rng):
    gt, inputs = _stereo_frame(rng, rig)
    est = disparity_3d3d_solve(inputs.left, inputs.disparity, rig)

    _assert_recovered(est.pose, gt)


def test_disparity_solve_without_valid_pixels(rig, rng):
    _, inputs = _stereo_frame(rng, rig)
    H, W = inputs.disparity.shape
    empty = DisparityMap(values=np.zeros((H, W)), valid=np.zeros((H, W), dtype=bool), confidence=np.zeros((H, W)))

    with pytest.raises(InsufficientDataError):
        disparity_3d3d_solve(inputs.left, empty, rig)


def test_disparity_noise_error_is_bounded(rig):

    depth = 600.0
    bound = depth ** 2 * 1.0 / (rig.left.fx * rig.baseline)

    errors = []
    for trial in range(30):
        gt, inputs = _stereo_frame(np.random.default_rng(trial), rig, depth=depth, disparity_sigma=1.0)
        est = disparity_3d3d_solve(inputs.left, inputs.disparity, rig, SolverParams(seed=trial))
        errors.append(abs(est.pose.translation[2] - gt.translation[2]))

    assert np.median(errors) < 2.0 * bound


def test_refine_from_ground_truth_is_stable(rig, rng):
    gt = _gt_pose(rng)
    corrs = _correspondences(gt, _object_points(rng, 30), rig.left)

    pose = refine_pose(gt, corrs, K=rig.left)

    assert pose.allclose(gt, atol=1e-9)


def test_refine_converges_from_perturbation(rig, rng):
    gt = _gt_pose(rng)
    points = _object_points(rng, 40)
    corrs = _correspondences(gt, points[:20], rig.left).concat(
        _correspondences(gt, points[20:], rig.right, view=RIGHT, extrinsic=rig.extrinsic_l2r)
    )
    start = Pose(rot_x(np.radians(1.0)) @ gt.rotation, gt.translation + np.array([3.0, 0.0, 4.0]))

    pose, costs = refine_pose(start, corrs, rig=rig, iterations=10, return_costs=True)

    _assert_recovered(pose, gt)
    assert all(later <= earlier for earlier, later in zip(costs, costs[1:]))


def test_refine_costs_never_increase_with_noise(rig, rng):
    gt = _gt_pose(rng)
    corrs = _correspondences(gt, _object_points(rng, 50), rig.left, sigma=2.0, rng=rng)
    start = gt.perturb(np.array([0.05, -0.03, 0.02, 10.0, -8.0, 25.0]))

    _, costs = refine_pose(start, corrs, K=rig.left, iterations=30, return_costs=True)

    assert len(costs) > 1
    assert np.all(np.diff(costs) <= 0)


def test_refine_behind_camera_raises(rig, rng):
    corrs = _correspondences(_gt_pose(rng), _object_points(rng, 10), rig.left)
    behind = Pose(np.eye(3), np.array([0.0, 0.0, -500.0]))

    with pytest.raises(NumericError):
        refine_pose(behind, corrs, K=rig.left)


def test_jacobian_matches_finite_differences(rig):

    h = 1e-5
    for trial in range(100):

        rng = np.random.default_rng(1000 + trial)
        pose = _gt_pose(rng)
        n = 12
        points = _object_points(rng, n)
        pixels = np.stack([rng.uniform(0, 639, n), rng.uniform(0, 479, n)], axis=1)
        corrs = CorrespondenceSet(pixels, points, rng.uniform(0.1, 1.0, n), rng.integers(0, 2, n))
        depth_pairs = (points[:4], pose.apply(points[:4]) + rng.normal(0.0, 5.0, size=(4, 3)))

        r, J = pose_residuals(pose, corrs, rig=rig, depth_pairs=depth_pairs, depth_weight=0.7)

        J_fd = np.zeros_like(J)
        for k in range(6):
            step = np.zeros(6)
            step[k] = h
            r_plus, _ = pose_residuals(pose.perturb(step), corrs, rig=rig, depth_pairs=depth_pairs, depth_weight=0.7)
            r_minus, _ = pose_residuals(pose.perturb(-step), corrs, rig=rig, depth_pairs=depth_pairs, depth_weight=0.7)
            J_fd[:, k] = (r_plus - r_minus) / (2.0 * h)

        np.testing.assert_allclose(J, J_fd, rtol=1e-5, atol=1e-5 * np.abs(J).max())
        assert r.shape == (2 * n + 12,)


def _estimate_of(pose:Pose, converged:bool=True, count:int=20) -> PoseEstimate:
    return PoseEstimate(pose=pose, inlier_count=count, inlier_ratio=1.0, converged=converged, n_correspondences=count)


def test_fuse_late_equal_inputs(rig, rng):
    gt = _gt_pose(rng)
    fused = fuse_late(_estimate_of(gt), _estimate_of(rig.to_view(gt, RIGHT)), rig)

    assert fused.pose.allclose(gt, atol=1e-9)
    assert not fused.fallback


def test_fuse_late_symmetric_rotations(rig):
    t = np.array([10.0, 0.0, 700.0])
    theta = 0.3
    left = Pose(rot_z(theta), t)
    right = rig.to_view(Pose(rot_z(-theta), t), RIGHT)

    fused = fuse_late(_estimate_of(left), _estimate_of(right), rig)

    np.testing.assert_allclose(fused.pose.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(fused.pose.translation, t, atol=1e-9)


def test_fuse_late_is_order_free(rig, rng):
    a, b = _gt_pose(rng), _gt_pose(rng)
    one = fuse_late(_estimate_of(a), _estimate_of(rig.to_view(b, RIGHT)), rig)
    two = fuse_late(_estimate_of(b), _estimate_of(rig.to_view(a, RIGHT)), rig)

    assert one.pose.allclose(two.pose, atol=1e-9)


def test_fuse_late_falls_back(rig, rng):
    good = _gt_pose(rng)
    fused = fuse_late(_estimate_of(_gt_pose(rng), converged=False), _estimate_of(rig.to_view(good, RIGHT)), rig)

    assert fused.fallback
    assert fused.pose.allclose(good, atol=1e-9)


@pytest.mark.parametrize('strategy', list(FusionStrategy))
def test_every_strategy_recovers_noiseless_pose(strategy, rig):
    for seed in range(100):
        gt, inputs = _stereo_frame(np.random.default_rng(seed), rig)

        est = estimate(strategy, inputs, SolverParams(seed=seed))

        _assert_recovered(est.pose, gt, rot_tol=1e-6, trans_tol=1e-3)
        assert est.strategy == strategy.value
        assert not est.fallback


@pytest.mark.parametrize('strategy', list(FusionStrategy))
def test_strategies_are_deterministic(strategy, rig, rng):
    _, inputs = _stereo_frame(rng, rig, disparity_sigma=0.5)
    for corrs in (inputs.left, inputs.right):
        corrs.pixels[:] += rng.normal(0.0, 1.0, size=corrs.pixels.shape)
    params = SolverParams(seed=11)

    first, second = estimate(strategy, inputs, params), estimate(strategy, inputs, params)

    np.testing.assert_array_equal(first.pose.as_matrix(), second.pose.as_matrix())
    assert first.inlier_count == second.inlier_count


@pytest.mark.parametrize('strategy', ['DISPARITY_3D3D', 'EARLY_JOINT_PNP_PLUS_DEPTH'])
def test_disparity_strategies_need_disparity(strategy, rig, rng):
    _, inputs = _stereo_frame(rng, rig)
    inputs.disparity = None

    with pytest.raises(ConfigurationError):
        estimate(strategy, inputs)


@pytest.mark.parametrize('strategy', ['LATE_POSE_COMBINE', 'DOUBLE_FUSION', 'MID_JOINT_PNP'])
def test_stereo_strategies_degrade_without_right_view(strategy, rig, rng):
    _, inputs = _stereo_frame(rng, rig)
    inputs.right = None
    params = SolverParams(seed=3)

    est = estimate(strategy, inputs, params)
    mono = estimate('MONO_LEFT', inputs, params)

    assert est.fallback
    np.testing.assert_array_equal(est.pose.as_matrix(), mono.pose.as_matrix())


def _collinear_right(inputs, rig):
    line = np.outer(np.linspace(-50.0, 50.0, 10), [1.0, 0.5, 0.2])
    cam = rig.extrinsic_l2r.apply(Pose(np.eye(3), np.array([0.0, 0.0, 800.0])).apply(line))
    return CorrespondenceSet(project_points(cam, rig.right), line, views=np.full(10, RIGHT, dtype=np.int8))


def _offscreen_right(inputs, rig):
    right = inputs.right
    pixels = right.pixels.copy()
    pixels[:5] = [-40.0, 10.0]
    return CorrespondenceSet(pixels, right.points, views=right.views)


@pytest.mark.parametrize('make_right', [_collinear_right, _offscreen_right])
@pytest.mark.parametrize('strategy', ['LATE_POSE_COMBINE', 'DOUBLE_FUSION', 'MID_JOINT_PNP', 'EARLY_JOINT_PNP_PLUS_DEPTH'])
def test_stereo_strategies_degrade_with_invalid_right_view(strategy, make_right, rig, rng):
    gt, inputs = _stereo_frame(rng, rig)
    inputs.right = make_right(inputs, rig)
    params = SolverParams(seed=3)

    est = estimate(strategy, inputs, params)

    assert est.fallback
    _assert_recovered(est.pose, gt)
    if strategy in ('LATE_POSE_COMBINE', 'DOUBLE_FUSION'):
        mono = estimate('MONO_LEFT', inputs, params)
        np.testing.assert_array_equal(est.pose.as_matrix(), mono.pose.as_matrix())


@pytest.mark.parametrize('strategy', ['LATE_POSE_COMBINE', 'DOUBLE_FUSION'])
def test_late_fusion_keeps_left_pose_when_right_solve_fails(strategy, rig, rng, monkeypatch):
    solve = posesolve.pnp_solve

    def failing_right(corrs, K, params=None):
        if K is rig.right:
            raise NumericError("non-finite pose increment")
        return solve(corrs, K, params)

    monkeypatch.setattr(posesolve, 'pnp_solve', failing_right)
    gt, inputs = _stereo_frame(rng, rig)

    est = estimate(strategy, inputs, SolverParams(seed=3))

    assert est.fallback
    assert est.strategy == strategy
    _assert_recovered(est.pose, gt)


def test_consistent_lifts_gate_in_pixels(rig):
    K, fB = rig.left, rig.left.fx * rig.baseline
    pixels = np.array([[320.0, 240.0], [300.0, 220.0], [350.0, 260.0], [320.0, 240.0]])
    Z = np.full(4, 1000.0)
    obj = backproject_pixels(pixels, Z, K)

    # one disparity pixel at 1 m is about 33 mm of depth; the others are off by 5 px
    lifted_z = fB / (fB / Z + np.array([1.0, 5.0, 0.0, 0.0]))
    lifted_px = pixels + np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [0.0, 0.0]])
    cam = backproject_pixels(lifted_px, lifted_z, K)
    cam[3] = [0.0, 0.0, 1000.0]
    obj[3] = [0.0, 0.0, -2000.0]

    keep = consistent_lifts(Pose(np.eye(3), np.zeros(3)), obj, cam, rig, 3.0)

    assert abs(Z[0] - lifted_z[0]) > 30.0
    assert keep.tolist() == [True, False, False, False]


def test_early_fusion_uses_noisy_disparity(rig):
    for seed in range(20):
        gt, inputs = _stereo_frame(np.random.default_rng(seed), rig, depth=1000.0, disparity_sigma=1.0)

        est = estimate('EARLY_JOINT_PNP_PLUS_DEPTH', inputs, SolverParams(seed=seed))

        assert not est.fallback
        assert abs(est.pose.translation[2] - gt.translation[2]) < 20.0


def test_disparity_strategy_keeps_noisy_far_lifts(rig, rng):
    gt, inputs = _stereo_frame(rng, rig, depth=1000.0, disparity_sigma=1.0)

    est = disparity_3d3d_solve(inputs.left, inputs.disparity, rig, SolverParams(seed=2))

    assert est.inlier_count >= 40
    assert abs(est.pose.translation[2] - gt.translation[2]) < 20.0


def test_disparity_strategy_falls_back_without_lifts(rig, rng):
    gt, inputs = _stereo_frame(rng, rig)
    H, W = inputs.disparity.shape
    inputs.disparity = DisparityMap(values=np.zeros((H, W)), valid=np.zeros((H, W), dtype=bool), confidence=np.zeros((H, W)))

    est = estimate('DISPARITY_3D3D', inputs)

    assert est.fallback
    _assert_recovered(est.pose, gt)


def test_unknown_strategy_name():
    with pytest.raises(ConfigurationError):
        FusionStrategy.from_name('STEREO_MAGIC')
    assert FusionStrategy.from_name(' mono_left ') is FusionStrategy.MONO_LEFT


def test_solver_params_validation():
    with pytest.raises(ConfigurationError):
        SolverParams(ransac_threshold_px=0.0)
    with pytest.raises(ConfigurationError):
        SolverParams(ransac_confidence=1.0)
    assert SolverParams.from_dict({'seed': 4, 'unrelated': 1}).seed == 4


def test_correspondences_from_feature_maps():
    maps = DenseFeatureMaps.empty(100, 120)
    maps.mask[10:90, 20:100] = True
    maps.xyz[maps.mask] = [1.0, 2.0, 3.0]
    maps.instance = np.where(maps.mask, 0, -1).astype(np.int32)
    maps.instance[10:90, 60:100] = 1

    corrs = CorrespondenceSet.from_feature_maps(maps, view=RIGHT, inst_id=1, max_count=500)

    assert 0 < len(corrs) <= 500
    assert np.all(corrs.pixels[:, 0] >= 60)
    assert np.all(corrs.views == RIGHT)
    np.testing.assert_array_equal(corrs.points[0], [1.0, 2.0, 3.0])


def test_correspondence_weights_are_checked():
    with pytest.raises(ValueError):
        CorrespondenceSet(np.zeros((2, 2)), np.zeros((2, 3)), weights=np.array([0.5, 1.5]))


@pytest.mark.slow
def test_disparity_strategies_constrain_depth_best(rig, cube):

    # (pixel noise, disparity noise) cells, each run on the same 500 renders
    grid = [(2.0, 0.0), (2.0, 1.0), (4.0, 0.5)]
    names = ['MONO_LEFT', 'MID_JOINT_PNP', 'DISPARITY_3D3D', 'EARLY_JOINT_PNP_PLUS_DEPTH']
    depth_err = {cell: {name: [] for name in names} for cell in grid}
    add = {name: [] for name in names}
    model = cube.vertices

    for trial in range(500):

        rng = np.random.default_rng(trial)
        gt = Pose(random_rotation(rng), np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), 1000.0]))

        maps_left = render_scene([(cube, gt)], rig.left, with_selfocc=False).maps
        maps_right = render_scene([(cube, rig.to_view(gt, RIGHT))], rig.right, with_selfocc=False).maps
        clean_left = CorrespondenceSet.from_feature_maps(maps_left, LEFT, max_count=300)
        clean_right = CorrespondenceSet.from_feature_maps(maps_right, RIGHT, max_count=300)

        for idx, (noise_px, disparity_sigma) in enumerate(grid):

            left = inject_noise(clean_left, rng, rig.left, noise_px=noise_px)
            right = inject_noise(clean_right, rng, rig.right, noise_px=noise_px)
            disparity = disparity_from_depth(maps_left.depth, rig, disparity_sigma, seed=1000 * trial + idx, mask=maps_left.mask)
            inputs = FrameInputs(left=left, rig=rig, right=right, disparity=disparity)

            for name in names:
                est = estimate(name, inputs, SolverParams(max_correspondences=300, seed=trial))
                depth_err[grid[idx]][name].append(abs(est.pose.translation[2] - gt.translation[2]))
                add[name].append(np.linalg.norm(est.pose.apply(model) - gt.apply(model), axis=1).mean())

    for cell in grid:
        median = {name: np.median(depth_err[cell][name]) for name in names}
        assert median['MID_JOINT_PNP'] < median['MONO_LEFT'], cell
        assert median['DISPARITY_3D3D'] < median['MID_JOINT_PNP'], cell
        assert median['EARLY_JOINT_PNP_PLUS_DEPTH'] < median['MID_JOINT_PNP'], cell

    mean_add = {name: np.mean(add[name]) for name in names}
    assert mean_add['EARLY_JOINT_PNP_PLUS_DEPTH'] <= mean_add['MID_JOINT_PNP'] <= mean_add['MONO_LEFT']
