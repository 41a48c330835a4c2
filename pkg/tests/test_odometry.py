import math

import numpy as np
import pytest

from spooflab.geometry import Pose
from spooflab.odometry import (
    IcpConfig,
    ScanMatchOdometry,
    VoxelMap,
    predict_initial_guess,
    register_scan,
    run_odometry,
    update_map,
    voxel_downsample,
)
from spooflab.worldsim import (
    NO_RETURN,
    LidarSpec,
    RangeScan,
    Rect,
    World,
    builtin_world,
    raycast_scan,
    sample_trajectory,
)


def default_cfg(**kw):
    base = dict(
        max_correspondence_distance=1.0,
        max_iterations=30,
        convergence_translation=1e-4,
        convergence_rotation=1e-4,
        downsample_voxel=0.25,
        map_voxel=0.25,
        map_max_points_per_voxel=1,
    )
    base.update(kw)
    return IcpConfig(**base)


def box_cloud(n_per_face=400, half=5.0, seed=0):
    # random points on four vertical walls of a square room, z in [0, 2]
    rng = np.random.default_rng(seed)
    pts = []
    for axis, sign in ((0, 1), (0, -1), (1, 1), (1, -1)):
        q = rng.uniform(-half, half, size=(n_per_face, 2))
        z = rng.uniform(0.0, 2.0, size=n_per_face)
        face = np.empty((n_per_face, 3))
        face[:, axis] = sign * half
        face[:, 1 - axis] = q[:, 0]
        face[:, 2] = z
        pts.append(face)
    return np.vstack(pts)


def box_world(half=20.0):
    h = half
    return World(
        "box",
        [
            Rect((h, -h, -5.0), (0.0, 2 * h, 0.0), (0.0, 0.0, 10.0)),
            Rect((-h, -h, -5.0), (0.0, 2 * h, 0.0), (0.0, 0.0, 10.0)),
            Rect((-h, h, -5.0), (2 * h, 0.0, 0.0), (0.0, 0.0, 10.0)),
            Rect((-h, -h, -5.0), (2 * h, 0.0, 0.0), (0.0, 0.0, 10.0)),
        ],
    )


def spec_3ch():
    return LidarSpec(
        channels=3,
        elevation_angles=np.radians([-0.5, 0.0, 0.5]),
        azimuth_step=math.radians(1.5),
        max_range=160.0,
        frame_interval=0.1,
    )


# --- voxel_downsample ---------------------------------------------------------


def test_downsample_empty():
    out = voxel_downsample(np.empty((0, 3)), 0.5)
    assert out.shape == (0, 3)


def test_downsample_centroid():
    pts = np.array([[0.2, 0.0, 0.0], [0.4, 0.0, 0.0]])
    out = voxel_downsample(pts, 1.0)
    assert out.shape == (1, 3)
    np.testing.assert_allclose(out[0], [0.3, 0.0, 0.0], atol=1e-12)


def test_downsample_preserves_separated_points():
    pts = np.array([[0.1, 0.1, 0.1], [10.0, 0.2, 0.3], [0.4, 10.0, 0.5]])
    out = voxel_downsample(pts, 0.5)
    assert out.shape == (3, 3)
    got = {tuple(np.round(p, 9)) for p in out}
    want = {tuple(p) for p in pts}
    assert got == want


def test_downsample_rejects_nonpositive_voxel():
    with pytest.raises(ValueError):
        voxel_downsample(np.zeros((1, 3)), 0.0)


# --- predict_initial_guess ------------------------------------------------------


def test_guess_empty_history_is_identity():
    assert predict_initial_guess([]).almost_equal(Pose.identity())


def test_guess_single_pose_extends_identity():
    only = Pose.from_yaw(0.3, (1.0, 2.0, 0.0))
    assert predict_initial_guess([only]).almost_equal(only)


def test_guess_constant_translation():
    history = [Pose.identity(), Pose.from_yaw(0.0, (1.0, 0.0, 0.0))]
    guess = predict_initial_guess(history)
    np.testing.assert_allclose(guess.t, [2.0, 0.0, 0.0], atol=1e-12)
    assert guess.yaw() == pytest.approx(0.0, abs=1e-12)


def test_guess_constant_yaw_rate():
    history = [Pose.from_yaw(0.1), Pose.from_yaw(0.2)]
    guess = predict_initial_guess(history)
    assert guess.yaw() == pytest.approx(0.3, abs=1e-9)


# --- register_scan ---------------------------------------------------------------


def seeded_map(points, cfg):
    vmap = VoxelMap(cfg.map_voxel, cfg.map_max_points_per_voxel)
    vmap.insert(points)
    return vmap


def test_self_registration_recovers_identity():
    cfg = default_cfg()
    vmap = seeded_map(box_cloud(), cfg)
    scan = vmap.points.copy()  # exact sample of the map
    pose, diag = register_scan(vmap, scan, Pose.from_yaw(0.0, (0.3, 0.0, 0.0)), cfg)
    assert not diag.diverged
    assert np.linalg.norm(pose.t) < 1e-3
    assert abs(pose.yaw()) < 1e-3


def test_registration_recovers_small_offset():
    cfg = default_cfg()
    cloud = box_cloud()
    vmap = seeded_map(cloud, cfg)
    true_pose = Pose.from_yaw(0.02, (0.15, -0.1, 0.0))
    scan_local = true_pose.inverse().transform(cloud)
    pose, diag = register_scan(vmap, scan_local, Pose.identity(), cfg)
    assert not diag.diverged
    assert np.linalg.norm(pose.t - true_pose.t) < 5e-3
    assert abs(pose.yaw() - true_pose.yaw()) < 5e-3


def test_registration_beyond_gate_diverges_to_guess():
    cfg = default_cfg()
    cloud = box_cloud()
    vmap = seeded_map(cloud, cfg)
    guess = Pose.from_yaw(0.0, (200.0, 0.0, 0.0))
    scan_local = cloud  # lands 200 m from every map point once transformed
    pose, diag = register_scan(vmap, scan_local, guess, cfg)
    assert diag.diverged
    assert pose.almost_equal(guess)
    assert diag.inliers == 0


def test_degenerate_plane_constrains_normal_only():
    # single dense plane: in-plane translation is unobservable, so only the
    # normal component of the recovered motion is trustworthy
    rng = np.random.default_rng(3)
    n = 4000
    plane = np.column_stack(
        [
            np.full(n, 5.0),
            rng.uniform(-6.0, 6.0, size=n),
            rng.uniform(0.0, 3.0, size=n),
        ]
    )
    cfg = default_cfg()
    vmap = seeded_map(plane, cfg)
    shifted = plane + np.array([0.0, 0.5, 0.0])  # in-plane slide
    pose, diag = register_scan(vmap, shifted, Pose.identity(), cfg)
    assert not diag.diverged
    # normal direction (x) must stay pinned even though y is ambiguous
    assert abs(pose.t[0]) <= 1e-3


def test_register_scan_requires_nonempty_map():
    cfg = default_cfg()
    with pytest.raises(ValueError):
        register_scan(VoxelMap(0.25, 1), box_cloud(), Pose.identity(), cfg)


def test_register_scan_deterministic():
    cfg = default_cfg()
    cloud = box_cloud(seed=7)
    vmap = seeded_map(cloud, cfg)
    scan_local = Pose.from_yaw(0.01, (0.1, 0.05, 0.0)).inverse().transform(cloud)
    p1, d1 = register_scan(vmap, scan_local, Pose.identity(), cfg)
    p2, d2 = register_scan(vmap, scan_local, Pose.identity(), cfg)
    assert p1.almost_equal(p2, tol=0.0)
    assert d1 == d2


# --- VoxelMap ----------------------------------------------------------------------


def test_map_cap_keeps_earliest():
    vmap = VoxelMap(0.25, 1)
    first = np.array([[0.1, 0.1, 0.1]])
    later = np.array([[0.12, 0.11, 0.1]])
    assert vmap.insert(first) == 1
    assert vmap.insert(later) == 0
    assert len(vmap) == 1
    np.testing.assert_allclose(vmap.points[0], first[0])


def test_map_same_scan_reinsert_adds_nothing():
    vmap = VoxelMap(0.25, 1)
    cloud = box_cloud(n_per_face=50)
    vmap.insert(cloud)
    n = len(vmap)
    assert vmap.insert(cloud) == 0
    assert len(vmap) == n


def test_map_disjoint_regions_accumulate():
    vmap = VoxelMap(0.25, 1)
    a = box_cloud(n_per_face=50, seed=1)
    b = a + np.array([100.0, 0.0, 0.0])  # exact multiple of the voxel pitch
    vmap.insert(a)
    na = len(vmap)
    vmap.insert(b)
    assert len(vmap) == 2 * na


def test_map_cap_two_keeps_two():
    vmap = VoxelMap(1.0, 2)
    vmap.insert(np.array([[0.1, 0.0, 0.0]]))
    vmap.insert(np.array([[0.2, 0.0, 0.0]]))
    vmap.insert(np.array([[0.3, 0.0, 0.0]]))
    assert len(vmap) == 2


def test_map_prune_beyond():
    vmap = VoxelMap(0.25, 1)
    near = np.array([[1.0, 0.0, 0.0]])
    far = np.array([[500.0, 0.0, 0.0]])
    vmap.insert(near)
    vmap.insert(far)
    dropped = vmap.prune_beyond(np.array([0.0, 0.0, 0.0]), 250.0)
    assert dropped == 1
    assert len(vmap) == 1
    np.testing.assert_allclose(vmap.points[0], near[0])
    # pruned voxels accept fresh points again
    assert vmap.insert(far) == 1


def test_update_map_transforms_before_insert():
    cfg = default_cfg()
    vmap = VoxelMap(cfg.map_voxel, cfg.map_max_points_per_voxel)
    pose = Pose.from_yaw(0.0, (10.0, 0.0, 0.0))
    update_map(vmap, np.array([[1.0, 0.0, 0.0]]), pose, cfg)
    np.testing.assert_allclose(vmap.points[0], [11.0, 0.0, 0.0], atol=1e-12)


# --- ScanMatchOdometry ----------------------------------------------------------------


def test_all_no_return_frame_coasts_on_constant_velocity():
    spec = spec_3ch()
    cfg = default_cfg()
    world = box_world()
    odo = ScanMatchOdometry(cfg, Pose.identity())
    dt = spec.frame_interval
    poses = []
    for i in range(4):
        gt = Pose.from_yaw(0.0, (2.0 * dt * i, 0.0, 0.0))
        pose, _ = odo.step(raycast_scan(world, gt, spec, dt * i))
        poses.append(pose)
    blank = RangeScan(dt * 4, np.full((spec.channels, spec.azimuth_count), NO_RETURN), spec)
    coasted, diag = odo.step(blank)
    assert diag.diverged
    # ignored frame advances by the constant-velocity prediction, nothing else
    assert coasted.almost_equal(predict_initial_guess(poses[-2:]))


def test_odometry_tracks_uniform_motion():
    world = builtin_world("feature_rich")
    spec = spec_3ch()
    gt = sample_trajectory([(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)], 2.0, spec.frame_interval)
    cfg = default_cfg()
    odo = ScanMatchOdometry(cfg, gt.poses[0])
    err = []
    for i, pose in enumerate(gt.poses):
        est, _ = odo.step(raycast_scan(world, pose, spec, gt.timestamps[i]))
        err.append(np.linalg.norm(est.t - pose.t))
    assert max(err) < 0.1


def test_odometry_reset_clears_state():
    cfg = default_cfg()
    odo = ScanMatchOdometry(cfg, Pose.identity())
    spec = spec_3ch()
    scan = RangeScan(0.0, np.full((spec.channels, spec.azimuth_count), 30.0), spec)
    odo.step(scan)
    assert len(odo.vmap) > 0
    anchor = Pose.from_yaw(0.5, (7.0, -2.0, 0.0))
    odo.reset(anchor)
    assert odo.pose.almost_equal(anchor)
    assert len(odo.vmap) == 0
    assert len(odo.history) == 0
    assert odo.frame_index == 0


def test_run_odometry_matches_streaming():
    world = box_world()
    spec = spec_3ch()
    gt = sample_trajectory([(0.0, 0.0, 0.0), (4.0, 0.0, 0.0)], 2.0, spec.frame_interval)
    scans = [raycast_scan(world, p, spec, t) for p, t in zip(gt.poses, gt.timestamps)]
    cfg = default_cfg()
    poses, diags = run_odometry(scans, cfg, gt.poses[0])
    odo = ScanMatchOdometry(cfg, gt.poses[0])
    for scan, pose, diag in zip(scans, poses, diags):
        p, d = odo.step(scan)
        assert p.almost_equal(pose, tol=0.0)
        assert d == diag
    assert len(poses) == len(scans)
