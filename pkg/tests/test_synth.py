import numpy as np
import pytest

from surfelrecon import synth


def test_sphere_center_pixel_depth_exact():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(64, 48)
    eye = np.array([0.0, 0.0, -1.5])
    pose = synth.look_at_pose(eye, np.zeros(3))
    depth, color = synth.render_frame(scene, pose, K)
    # principal ray hits the sphere front: depth = 1.5 - 0.5
    cy, cx = int(K.cy), int(K.cx)
    assert depth[cy, cx] == pytest.approx(1.0, abs=2e-3)


def test_depth_is_z_not_ray_length():
    # a wall orthogonal to the view axis has constant z-depth even at the
    # image corners, where the ray itself is longer
    scene = synth.SyntheticScene(
        [synth.Plane(np.array([0, 0, 2.0]), np.array([0, 0, -1.0]),
                     np.array([1.0, 0, 0]), 50.0, 50.0)],
        name="wall",
    )
    K = synth.default_intrinsics(64, 48)
    pose = synth.look_at_pose(np.zeros(3), np.array([0, 0, 1.0]))
    depth, _ = synth.render_frame(scene, pose, K)
    assert np.allclose(depth[depth > 0], 2.0, atol=1e-9)
    assert depth[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_sphere_silhouette_size():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(160, 120)
    pose = synth.look_at_pose(np.array([0.0, 0.0, -1.5]), np.zeros(3))
    depth, _ = synth.render_frame(scene, pose, K)
    # angular radius asin(0.5/1.5) -> expected pixel radius f*tan(theta)
    theta = np.arcsin(0.5 / 1.5)
    expected_r = 0.866 * 160 * np.tan(theta)
    row = depth[int(K.cy)]
    width_px = np.count_nonzero(row > 0)
    assert width_px == pytest.approx(2 * expected_r, abs=3)


def test_sphere_hit_points_on_surface():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(80, 60)
    for pose in synth.orbit_trajectory(8, radius=1.5):
        depth, _ = synth.render_frame(scene, pose, K)
        ys, xs = np.nonzero(depth > 0)
        z = depth[ys, xs]
        x_cam = (xs + 0.5 - K.cx) * z / K.fx
        y_cam = (ys + 0.5 - K.cy) * z / K.fy
        pts = pose.transform(np.stack([x_cam, y_cam, z], axis=1))
        r = np.linalg.norm(pts, axis=1)
        assert np.abs(r - 0.5).max() < 1e-6


def test_box_and_sheet_scenes_render():
    K = synth.default_intrinsics(64, 48)
    for name in ("box", "thin_sheet", "plane"):
        scene = synth.make_scene(name)
        pose = synth.orbit_trajectory(12, radius=1.5)[0]
        depth, color = synth.render_frame(scene, pose, K)
        assert (depth > 0).sum() > 50
        assert color[depth > 0].max() > 0


def test_distance_agrees_with_raycast():
    scene = synth.make_scene("box")
    K = synth.default_intrinsics(64, 48)
    pose = synth.orbit_trajectory(12, radius=1.5)[3]
    depth, _ = synth.render_frame(scene, pose, K)
    ys, xs = np.nonzero(depth > 0)
    z = depth[ys, xs]
    pts = pose.transform(np.stack(
        [(xs + 0.5 - K.cx) * z / K.fx, (ys + 0.5 - K.cy) * z / K.fy, z],
        axis=1))
    d = scene.distance(pts)
    assert np.abs(d).max() < 1e-6


def test_noise_and_quantization():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(64, 48)
    pose = synth.look_at_pose(np.array([0.0, 0.0, -1.5]), np.zeros(3))
    clean, _ = synth.render_frame(scene, pose, K)
    noisy, _ = synth.render_frame(scene, pose, K,
                                  noise=synth.NoiseModel(0.01),
                                  rng=np.random.default_rng(0))
    mask = clean > 0
    rel = (noisy[mask] - clean[mask]) / clean[mask]
    assert 0.005 < np.std(rel) < 0.02
    # quantized to the 16-bit depth grid
    steps = noisy[mask] * 5000.0
    assert np.allclose(steps, np.rint(steps), atol=1e-6)


def test_generate_frames_deterministic():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(32, 24)
    poses = synth.orbit_trajectory(3, radius=1.5)
    a = synth.generate_frames(scene, poses, K, synth.NoiseModel(0.005),
                              seed=5)
    b = synth.generate_frames(scene, poses, K, synth.NoiseModel(0.005),
                              seed=5)
    c = synth.generate_frames(scene, poses, K, synth.NoiseModel(0.005),
                              seed=6)
    for (da, ca, pa), (db, cb, pb) in zip(a, b):
        assert np.array_equal(da, db)
        assert np.array_equal(ca, cb)
    assert any(not np.array_equal(da, dc)
               for (da, _, _), (dc, _, _) in zip(a, c))


def test_orbit_poses_look_at_center():
    poses = synth.orbit_trajectory(16, radius=1.5, height=0.3)
    for pose in poses:
        eye = pose.translation
        assert np.hypot(eye[0], eye[2]) == pytest.approx(1.5, abs=1e-9)
        # camera +z axis points at the orbit center
        fwd = pose.matrix[:, 2]
        to_center = -eye / np.linalg.norm(eye)
        assert np.dot(fwd, to_center) > 0.99


def test_ground_truth_samples_on_surface():
    scene = synth.make_scene("sphere")
    K = synth.default_intrinsics(64, 48)
    poses = synth.orbit_trajectory(10, radius=1.5)
    gt = synth.ground_truth_samples(scene, poses, K, frame_stride=1,
                                    voxel=0.02)
    assert len(gt) > 300
    assert np.abs(scene.distance(gt)).max() < 1e-6
    # voxel thinning: no two samples closer than ~half the voxel size
    from scipy.spatial import cKDTree

    d, _ = cKDTree(gt).query(gt, k=2)
    assert np.median(d[:, 1]) > 0.005


def test_scene_description_round_trip(tmp_path):
    scene = synth.make_scene("box")
    path = tmp_path / "scene.json"
    synth.save_scene_description(scene, path)
    scene2 = synth.load_scene_description(path)
    pts = np.random.default_rng(0).uniform(-1, 1, (100, 3))
    assert np.allclose(scene.distance(pts), scene2.distance(pts), atol=1e-12)
