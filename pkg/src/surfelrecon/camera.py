"""Pinhole camera model and rigid poses.

Pixel coordinates follow the pixel-center convention: the center of the
integer pixel (x, y) sits at (x + 0.5, y + 0.5) in continuous image
coordinates, so unproject and project are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


def quat_to_matrix(q):
    """Rotation matrix from quaternion (qx, qy, qz, qw)."""
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Quaternion (qx, qy, qz, qw) from a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world transform: p_world = R @ p_cam + t."""

    rotation: np.ndarray  # quaternion (qx, qy, qz, qw), unit norm
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("quaternion must be unit norm")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def transform(self, points):
        """Camera frame -> world frame. Accepts (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix.T + self.translation

    def inverse_transform(self, points):
        """World frame -> camera frame."""
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.matrix

    def rotate(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.matrix.T

    def inverse_rotate(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.matrix


def unproject(pixel, depth, K: CameraIntrinsics):
    """3D camera-frame point for an integer pixel and its depth (meters)."""
    x, y = pixel
    return np.array(
        [
            (x + 0.5 - K.cx) * depth / K.fx,
            (y + 0.5 - K.cy) * depth / K.fy,
            depth,
        ]
    )


def unproject_grid(depth, K: CameraIntrinsics):
    """Unproject a full H x W depth image to an H x W x 3 point image.

    Pixels with depth <= 0 give points with z <= 0; callers mask them.
    """
    h, w = depth.shape
    xs = (np.arange(w) + 0.5 - K.cx) / K.fx
    ys = (np.arange(h) + 0.5 - K.cy) / K.fy
    pts = np.empty((h, w, 3))
    pts[:, :, 0] = xs[None, :] * depth
    pts[:, :, 1] = ys[:, None] * depth
    pts[:, :, 2] = depth
    return pts


def project(point, K: CameraIntrinsics):
    """Project a camera-frame point to (u, v), depth; None if not visible."""
    x, y, z = point
    if z <= 0:
        return None
    u = K.fx * x / z + K.cx - 0.5
    v = K.fy * y / z + K.cy - 0.5
    if not (0 <= u < K.width and 0 <= v < K.height):
        return None
    return (u, v), z


def project_many(points, K: CameraIntrinsics):
    """Vectorized projection of (N, 3) camera-frame points.

    Returns (u, v, z, visible) arrays; u/v are only meaningful where
    visible is True.
    """
    p = np.asarray(points, dtype=np.float64)
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * p[:, 0] / z + K.cx - 0.5
        v = K.fy * p[:, 1] / z + K.cy - 0.5
    visible = (z > 0) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return u, v, z, visible
