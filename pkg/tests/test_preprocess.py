import math

import numpy as np
import pytest

from surfelrecon.camera import CameraIntrinsics, Pose
from surfelrecon.preprocess import (PreprocessConfig, Preprocessor,
                                    bilateral_filter,
                                    compute_normals_and_radii, cutoff_far,
                                    erode_near_invalid,
                                    temporal_outlier_filter)


@pytest.fixture
def K():
    return CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)


def test_cutoff():
    d = np.array([[0.5, 3.0, 3.01, 10.0]])
    out = cutoff_far(d, 3.0)
    assert list(out[0]) == [0.5, 3.0, 0.0, 0.0]


def test_bilateral_constant_depth_unchanged():
    d = np.full((20, 20), 1.7)
    out = bilateral_filter(d)
    assert np.allclose(out, 1.7, atol=1e-12)


def test_bilateral_preserves_invalid_and_edges():
    d = np.full((20, 20), 1.0)
    d[:, 10:] = 2.0
    d[0, 0] = 0.0
    out = bilateral_filter(d)
    assert out[0, 0] == 0.0
    # range kernel keeps the step edge sharp: far side barely bleeds over
    assert abs(out[10, 9] - 1.0) < 0.01
    assert abs(out[10, 10] - 2.0) < 0.01


def test_bilateral_smooths_small_noise():
    rng = np.random.default_rng(0)
    d = 1.0 + rng.normal(0, 0.004, (30, 30))
    out = bilateral_filter(d)
    assert np.std(out[8:-8, 8:-8]) < 0.5 * np.std(d[8:-8, 8:-8])


def test_temporal_filter_consistent_frames_keep_all(K):
    d = np.full((48, 64), 1.5)
    frames = [(d, Pose.identity()) for _ in range(5)]
    keep = temporal_outlier_filter(frames, 2, K)
    # points at the image edge may fall outside other identical frames
    assert keep[10:-10, 10:-10].all()


def test_temporal_filter_rejects_outlier_pixel(K):
    d = np.full((48, 64), 1.5)
    bad = d.copy()
    bad[24, 32] = 1.0  # flickering pixel in the center frame
    frames = [(d, Pose.identity())] * 2 + [(bad, Pose.identity())] + [(d, Pose.identity())] * 2
    keep = temporal_outlier_filter(frames, 2, K)
    assert not keep[24, 32]
    assert keep[24, 31]


def test_temporal_filter_tolerance_boundary(K):
    d = np.full((48, 64), 1.0)
    other = np.full((48, 64), 1.019)  # just inside the 2% band
    keep = temporal_outlier_filter([(d, Pose.identity()), (other, Pose.identity())], 0, K)
    assert keep[24, 32]
    other2 = np.full((48, 64), 1.021)
    keep2 = temporal_outlier_filter([(d, Pose.identity()), (other2, Pose.identity())], 0, K)
    assert not keep2[24, 32]


def test_erosion_radius_two():
    valid = np.ones((11, 11), dtype=bool)
    valid[5, 5] = False
    out = erode_near_invalid(valid, 2)
    ys, xs = np.nonzero(~out)
    cheb = np.maximum(np.abs(ys - 5), np.abs(xs - 5))
    assert cheb.max() == 2
    assert (~out).sum() == 25


def test_erosion_ignores_border():
    valid = np.ones((8, 8), dtype=bool)
    out = erode_near_invalid(valid, 2)
    assert out.all()


def test_normals_frontoparallel_plane(K):
    z = 1.3
    depth = np.full((48, 64), z)
    valid = depth > 0
    normal, radius, valid_out = compute_normals_and_radii(depth, valid, K)
    assert valid_out[10:-10, 10:-10].all()
    # normal points toward the camera (-z)
    assert np.allclose(normal[20, 30], [0, 0, -1], atol=1e-12)
    # pixel pitch z/f, diagonal neighbor at sqrt(2) times that
    expected_r = 1.5 * math.sqrt(2.0) * z / K.fx
    assert radius[20, 30] == pytest.approx(expected_r, abs=1e-12)


def test_radius_needs_full_neighborhood(K):
    depth = np.full((48, 64), 1.0)
    depth[10, 10] = 0.0
    valid = depth > 0
    _, radius, _ = compute_normals_and_radii(depth, valid, K)
    assert radius[10, 11] == 0.0  # neighbor of the hole
    assert radius[10, 12] > 0.0


def test_view_angle_cutoff(K):
    # a plane seen at ~89 degrees: x-slope makes the normal nearly
    # orthogonal to the viewing ray
    xs = (np.arange(64) + 0.5 - K.cx) / K.fx
    depth = np.clip(1.0 / np.maximum(1.0 - 60.0 * xs, 1e-3), 0.1, 50.0)
    depth = np.tile(depth, (48, 1))
    valid = np.ones_like(depth, dtype=bool)
    _, _, valid_out = compute_normals_and_radii(depth, valid, K, 85.0)
    assert valid_out.sum() < valid.sum()


def test_streaming_matches_batch(K):
    rng = np.random.default_rng(1)
    cfg = PreprocessConfig(enable_temporal=True)
    depths = [np.full((48, 64), 1.0 + 0.001 * i) for i in range(12)]
    color = np.zeros((48, 64, 3), dtype=np.uint8)
    pp = Preprocessor(K, cfg)
    out = []
    for i, d in enumerate(depths):
        out.extend(pp.push(d, color, Pose.identity(), i))
    lag = len(out)
    assert lag == 12 - cfg.temporal_window  # lookahead delay
    out.extend(pp.flush())
    assert [f.t for f in out] == list(range(12))
    assert all(f.valid[15:-15, 15:-15].all() for f in out)
