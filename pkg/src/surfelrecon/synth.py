"""Synthetic RGB-D scenes with exact surface distances.

Scenes are built from analytic primitives (rectangle "plane", sphere,
axis-aligned box, and a two-sided thin sheet), ray cast from an orbit
trajectory into depth + checkerboard-color images with optional
multiplicative depth noise and sensor quantization. Each primitive has
an exact point-to-surface distance so reconstruction accuracy can be
measured without sampling bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, Pose, matrix_to_quat


@dataclass
class Plane:
    """Finite one-sided rectangle; visible from the +normal side."""

    center: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    half_u: float
    half_v: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        u = np.asarray(self.u_axis, dtype=np.float64)
        u = u - np.dot(u, self.normal) * self.normal
        self.u_axis = u / np.linalg.norm(u)
        self.v_axis = np.cross(self.normal, self.u_axis)

    two_sided = False

    def raycast(self, origins, dirs):
        denom = dirs @ self.normal
        offs = (self.center - origins) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = offs / denom
        facing = denom < 0 if not self.two_sided else denom != 0
        hit = origins + t[:, None] * dirs - self.center
        in_u = np.abs(hit @ self.u_axis) <= self.half_u
        in_v = np.abs(hit @ self.v_axis) <= self.half_v
        ok = facing & (t > 0) & in_u & in_v
        t = np.where(ok, t, np.inf)
        normals = np.where(
            (denom < 0)[:, None], self.normal, -self.normal
        ) if self.two_sided else np.broadcast_to(self.normal, dirs.shape)
        return t, normals

    def distance(self, points):
        d = points - self.center
        du = np.clip(d @ self.u_axis, -self.half_u, self.half_u)
        dv = np.clip(d @ self.v_axis, -self.half_v, self.half_v)
        closest = self.center + du[:, None] * self.u_axis + dv[:, None] * self.v_axis
        return np.linalg.norm(points - closest, axis=1)

    def as_dict(self):
        return {
            "type": "thin_sheet" if self.two_sided else "plane",
            "center": self.center.tolist(),
            "normal": self.normal.tolist(),
            "u_axis": self.u_axis.tolist(),
            "half_u": self.half_u,
            "half_v": self.half_v,
        }


class ThinSheet(Plane):
    """Two coincident rectangles with opposite normals (zero thickness)."""

    two_sided = True


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)

    def raycast(self, origins, dirs):
        # dirs need not be unit length
        oc = origins - self.center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = (-b - sq) / a  # near intersection
        t = np.where(ok & (t > 0), t, np.inf)
        hit = origins + t[:, None] * dirs
        normals = hit - self.center
        with np.errstate(invalid="ignore"):
            normals = normals / np.maximum(
                np.linalg.norm(normals, axis=1)[:, None], 1e-300
            )
        return t, normals

    def distance(self, points):
        return np.abs(
            np.linalg.norm(points - self.center, axis=1) - self.radius
        )

    def as_dict(self):
        return {
            "type": "sphere",
            "center": self.center.tolist(),
            "radius": self.radius,
        }


@dataclass
class Box:
    center: np.ndarray
    half_sizes: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.half_sizes = np.asarray(self.half_sizes, dtype=np.float64)

    def raycast(self, origins, dirs):
        lo = self.center - self.half_sizes
        hi = self.center + self.half_sizes
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        ok = (tmax >= tmin) & (tmin > 0)
        t = np.where(ok, tmin, np.inf)
        hit = origins + t[:, None] * dirs
        rel = (hit - self.center) / self.half_sizes
        normals = np.zeros_like(dirs)
        ax = np.argmax(np.abs(rel), axis=1)
        normals[np.arange(len(dirs)), ax] = np.sign(
            rel[np.arange(len(dirs)), ax]
        )
        return t, normals

    def distance(self, points):
        q = np.abs(points - self.center) - self.half_sizes
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return np.abs(outside + inside)

    def as_dict(self):
        return {
            "type": "box",
            "center": self.center.tolist(),
            "half_sizes": self.half_sizes.tolist(),
        }


@dataclass
class NoiseModel:
    gaussian_sigma_frac: float = 0.0  # of depth z
    quantize: bool = True  # simulate 16-bit storage
    depth_scale: float = 5000.0


@dataclass
class SyntheticScene:
    primitives: list
    name: str = "scene"
    checker_size: float = 0.05

    def distance(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dists = np.stack([p.distance(points) for p in self.primitives])
        return dists.min(axis=0)

    def raycast(self, origins, dirs):
        best_t = np.full(len(dirs), np.inf)
        best_n = np.zeros_like(dirs)
        for prim in self.primitives:
            t, n = prim.raycast(origins, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n[closer] = n[closer]
        return best_t, best_n

    def as_dict(self):
        return {
            "name": self.name,
            "primitives": [p.as_dict() for p in self.primitives],
        }


def scene_from_dict(d):
    prims = []
    for pd in d["primitives"]:
        kind = pd["type"]
        if kind == "sphere":
            prims.append(Sphere(pd["center"], pd["radius"]))
        elif kind == "box":
            prims.append(Box(pd["center"], pd["half_sizes"]))
        elif kind in ("plane", "thin_sheet"):
            cls = ThinSheet if kind == "thin_sheet" else Plane
            prims.append(
                cls(pd["center"], pd["normal"], pd["u_axis"],
                    pd["half_u"], pd["half_v"])
            )
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    return SyntheticScene(prims, name=d.get("name", "scene"))


def make_scene(name) -> SyntheticScene:
    name = name.replace("-", "_")
    # canned scenes face the default orbit (camera starts on -z looking +z)
    if name == "plane":
        prims = [Plane([0, 0, 0], [0, 0, -1], [1, 0, 0], 0.5, 0.5)]
    elif name == "sphere":
        prims = [Sphere([0, 0, 0], 0.5)]
    elif name == "box":
        prims = [Box([0, 0, 0], [0.3, 0.25, 0.2])]
    elif name == "thin_sheet":
        prims = [ThinSheet([0, 0, 0], [0, 0, -1], [1, 0, 0], 0.4, 0.3)]
    else:
        raise ValueError(f"unknown scene {name!r}")
    return SyntheticScene(prims, name=name)


def default_intrinsics(width=160, height=120, depth_scale=5000.0):
    f = 0.866 * width  # ~60 degree horizontal field of view
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0,
                            width, height, depth_scale)


def look_at_pose(eye, target, up=(0.0, -1.0, 0.0)):
    """Camera-to-world pose with +z toward target (y down, x right)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        up = np.array([1.0, 0.0, 0.0])
        x = np.cross(up, z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return Pose(matrix_to_quat(R), eye)


def orbit_trajectory(n_frames, radius=1.5, center=(0.0, 0.0, 0.0),
                     height=0.3, sweep=2.0 * np.pi, axis="y"):
    """Poses on a circle around the scene center, looking inward."""
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for i in range(n_frames):
        a = sweep * i / max(n_frames, 1)
        if axis == "y":
            eye = center + np.array(
                [radius * np.sin(a), height, -radius * np.cos(a)]
            )
        else:
            eye = center + np.array(
                [radius * np.sin(a), -radius * np.cos(a), height]
            )
        poses.append(look_at_pose(eye, center))
    return poses


def _checker_colors(points, size):
    idx = np.floor(points / size).astype(np.int64).sum(axis=1)
    base = np.where((idx % 2) == 0, 200, 60).astype(np.uint8)
    c = np.empty(points.shape, dtype=np.uint8)
    c[:, 0] = base
    c[:, 1] = np.where(base == 200, 160, 90)
    c[:, 2] = 120
    return c


def render_frame(scene: SyntheticScene, pose: Pose, K: CameraIntrinsics,
                 noise: NoiseModel = None, rng=None, max_depth=12.0):
    """Ray-cast one (depth, color) image pair. Depth 0 marks no hit."""
    h, w = K.height, K.width
    xs = (np.arange(w) + 0.5 - K.cx) / K.fx
    ys = (np.arange(h) + 0.5 - K.cy) / K.fy
    d_cam = np.empty((h, w, 3))
    d_cam[:, :, 0] = xs[None, :]
    d_cam[:, :, 1] = ys[:, None]
    d_cam[:, :, 2] = 1.0
    dirs = pose.rotate(d_cam.reshape(-1, 3))
    origins = np.broadcast_to(pose.translation, dirs.shape)

    t, _ = scene.raycast(origins, dirs)
    depth = np.where(np.isfinite(t) & (t < max_depth), t, 0.0)
    hits = depth > 0
    points = origins[hits] + depth[hits][:, None] * dirs[hits]

    color = np.zeros((h * w, 3), dtype=np.uint8)
    color[hits] = _checker_colors(points, scene.checker_size)

    if noise is not None:
        if noise.gaussian_sigma_frac > 0:
            if rng is None:
                rng = np.random.default_rng(0)
            depth = depth * (
                1.0 + noise.gaussian_sigma_frac * rng.standard_normal(h * w)
            )
            depth[~hits] = 0.0
        if noise.quantize:
            depth = np.rint(depth * noise.depth_scale)
            depth = np.clip(depth, 0, 65535) / noise.depth_scale
    return depth.reshape(h, w), color.reshape(h, w, 3)


def generate_frames(scene, poses, K, noise: NoiseModel = None, seed=0):
    """In-memory dataset: list of (depth, color, pose) in pose order."""
    rng = np.random.default_rng(seed)
    out = []
    for pose in poses:
        depth, color = render_frame(scene, pose, K, noise, rng)
        out.append((depth, color, pose))
    return out


def ground_truth_samples(scene, poses, K, stride=4, frame_stride=5,
                         voxel=0.01):
    """Observed-surface samples from noiseless ray casts, thinned to at
    most one sample per voxel.

    Pixels are subjected to the same observability gates as the
    reconstruction input (view-angle cutoff, complete depth
    neighborhood, silhouette erosion), so completeness measures surface
    the pipeline had a chance to see.
    """
    from .preprocess import compute_normals_and_radii, erode_near_invalid

    pts = []
    for pose in poses[::max(frame_stride, 1)]:
        depth, _ = render_frame(scene, pose, K, noise=None)
        valid = erode_near_invalid(depth > 0, 2)
        _, radius, valid = compute_normals_and_radii(depth, valid, K)
        observable = valid & (radius > 0)
        h, w = depth.shape
        sub = observable[::stride, ::stride]
        ys, xs = np.nonzero(sub)
        if len(ys) == 0:
            continue
        py = ys * stride
        px = xs * stride
        z = depth[py, px]
        cam = np.stack(
            [
                (px + 0.5 - K.cx) * z / K.fx,
                (py + 0.5 - K.cy) * z / K.fy,
                z,
            ],
            axis=1,
        )
        pts.append(pose.transform(cam))
    if not pts:
        return np.zeros((0, 3))
    pts = np.concatenate(pts)
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return pts[np.sort(first)]


def save_scene_description(scene: SyntheticScene, path):
    with open(path, "w") as f:
        json.dump(scene.as_dict(), f, indent=2)


def load_scene_description(path) -> SyntheticScene:
    with open(path) as f:
        return scene_from_dict(json.load(f))
