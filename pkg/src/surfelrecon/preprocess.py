"""Depth image cleanup: far cutoff, bilateral smoothing, temporal outlier
rejection, erosion around missing depth, and normal/radius images.

Stage order is fixed: cutoff -> bilateral -> temporal -> erosion ->
normals/radii. Every stage except the bilateral filter only shrinks the
valid pixel set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, Pose, unproject_grid


@dataclass
class PreprocessConfig:
    max_depth: float = 3.0
    bilateral_sigma_xy: float = 3.0
    bilateral_sigma_z_factor: float = 0.05
    temporal_window: int = 4  # frames on each side
    temporal_tolerance: float = 0.02
    erosion_px: int = 2
    max_normal_view_angle: float = 85.0  # degrees
    # stage toggles (CLI-exposed)
    enable_cutoff: bool = True
    enable_bilateral: bool = True
    enable_temporal: bool = True
    enable_erosion: bool = True


@dataclass
class DepthFrame:
    depth: np.ndarray  # H x W meters, 0 = invalid
    color: np.ndarray  # H x W x 3, 0-255
    normal: np.ndarray  # H x W x 3 unit vectors (camera frame), 0 where undefined
    radius: np.ndarray  # H x W meters, 0 where undefined
    valid: np.ndarray  # H x W bool
    pose: Pose
    t: int
    intrinsics: CameraIntrinsics


def cutoff_far(depth, max_depth):
    out = depth.copy()
    out[out > max_depth] = 0.0
    return out


def bilateral_filter(depth, sigma_xy=3.0, sigma_z_factor=0.05):
    """Edge-preserving smoothing with range sigma proportional to depth.

    Window half-width is ceil(2 * sigma_xy); invalid pixels get zero
    weight and stay invalid in the output.
    """
    valid = depth > 0
    hw = math.ceil(2 * sigma_xy)
    h, w = depth.shape
    acc = np.zeros_like(depth)
    wsum = np.zeros_like(depth)
    sigma_z = sigma_z_factor * depth
    inv_2szz = np.zeros_like(depth)
    inv_2szz[valid] = 1.0 / (2.0 * sigma_z[valid] ** 2)
    for dy in range(-hw, hw + 1):
        for dx in range(-hw, hw + 1):
            sw = math.exp(-(dx * dx + dy * dy) / (2.0 * sigma_xy**2))
            shifted = np.zeros_like(depth)
            vs = np.zeros((h, w), dtype=bool)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            shifted[ys0:ys1, xs0:xs1] = depth[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            vs[ys0:ys1, xs0:xs1] = valid[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            diff = shifted - depth
            wgt = sw * np.exp(-(diff * diff) * inv_2szz)
            wgt[~vs] = 0.0
            acc += wgt * shifted
            wsum += wgt
    out = np.zeros_like(depth)
    out[valid] = acc[valid] / wsum[valid]
    return out


def temporal_outlier_filter(window_frames, center_index, K, tolerance=0.02):
    """Validity mask for the center frame of a temporal window.

    window_frames: list of (depth_meters, Pose) sharing intrinsics K.
    A center pixel survives iff in every other frame its unprojected point
    reprojects in bounds onto a valid depth d with |d - z_proj| <= tol * z_proj.
    """
    depth_c, pose_c = window_frames[center_index]
    valid = depth_c > 0
    pts_cam = unproject_grid(depth_c, K)
    pts_world = pose_c.transform(pts_cam.reshape(-1, 3))
    keep = valid.copy()
    for i, (depth_o, pose_o) in enumerate(window_frames):
        if i == center_index:
            continue
        pc = pose_o.inverse_transform(pts_world)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = K.fx * pc[:, 0] / z + K.cx - 0.5
            v = K.fy * pc[:, 1] / z + K.cy - 0.5
        px = np.rint(u).astype(np.int64)
        py = np.rint(v).astype(np.int64)
        in_bounds = (z > 0) & (px >= 0) & (px < K.width) & (py >= 0) & (py < K.height)
        ok = np.zeros(len(pc), dtype=bool)
        ib = np.flatnonzero(in_bounds)
        d = depth_o[py[ib], px[ib]]
        ok[ib] = (d > 0) & (np.abs(d - z[ib]) <= tolerance * z[ib])
        keep &= ok.reshape(depth_c.shape)
    return keep


def erode_near_invalid(valid, erosion_px=2):
    """Invalidate pixels within Chebyshev distance erosion_px of an invalid
    pixel. The image border itself does not count as invalid."""
    if erosion_px <= 0:
        return valid.copy()
    inv = ~valid
    h, w = valid.shape
    dilated = np.zeros_like(inv)
    e = erosion_px
    for dy in range(-e, e + 1):
        for dx in range(-e, e + 1):
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            dilated[ys0:ys1, xs0:xs1] |= inv[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
    return valid & ~dilated


def compute_normals_and_radii(depth, valid, K, max_view_angle_deg=85.0):
    """Per-pixel camera-frame normals and neighbor-distance radii.

    Normals come from central differences of the unprojected point image
    (one-sided at validity boundaries), oriented toward the camera;
    pixels viewed more obliquely than the angle cutoff are dropped.
    The radius is 1.5x the maximum 3D distance to the 8 image neighbors
    and is only defined where the whole 8-neighborhood is valid.
    """
    h, w = depth.shape
    pts = unproject_grid(depth, K)
    pts = np.where(valid[:, :, None], pts, np.nan)

    def tangent(axis):
        # central difference where both neighbors valid, one-sided otherwise
        plus = np.full_like(pts, np.nan)
        minus = np.full_like(pts, np.nan)
        if axis == 0:  # x
            plus[:, :-1] = pts[:, 1:]
            minus[:, 1:] = pts[:, :-1]
        else:  # y
            plus[:-1] = pts[1:]
            minus[1:] = pts[:-1]
        have_p = ~np.isnan(plus[:, :, 2])
        have_m = ~np.isnan(minus[:, :, 2])
        t = np.full_like(pts, np.nan)
        both = have_p & have_m
        t[both] = (plus[both] - minus[both]) * 0.5
        only_p = have_p & ~have_m
        t[only_p] = plus[only_p] - pts[only_p]
        only_m = have_m & ~have_p
        t[only_m] = pts[only_m] - minus[only_m]
        return t

    tx = tangent(0)
    ty = tangent(1)
    n = np.cross(tx.reshape(-1, 3), ty.reshape(-1, 3)).reshape(h, w, 3)
    norm = np.linalg.norm(n, axis=2)
    defined = valid & np.isfinite(norm) & (norm > 0)
    normal = np.zeros((h, w, 3))
    normal[defined] = n[defined] / norm[defined][:, None]
    # orient toward the camera: n . (-p) > 0
    dots = np.einsum("ijk,ijk->ij", normal, pts)
    flip = defined & (dots > 0)
    normal[flip] = -normal[flip]

    # view-angle cutoff
    pn = np.linalg.norm(pts, axis=2)
    cos_view = np.zeros((h, w))
    cos_view[defined] = (
        -np.einsum("ijk,ijk->ij", normal, pts)[defined] / pn[defined]
    )
    cos_min = math.cos(math.radians(max_view_angle_deg))
    valid_out = valid & defined & (cos_view >= cos_min)
    normal[~valid_out] = 0.0

    # radius where the full 8-neighborhood is valid (after the angle drop)
    radius = np.zeros((h, w))
    full_nb = np.ones((h, w), dtype=bool)
    max_d2 = np.zeros((h, w))
    pts_ok = np.where(valid_out[:, :, None], pts, np.nan)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.full_like(pts_ok, np.nan)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            shifted[ys0:ys1, xs0:xs1] = pts_ok[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            d2 = np.sum((shifted - pts_ok) ** 2, axis=2)
            ok = np.isfinite(d2)
            full_nb &= ok
            max_d2 = np.where(ok, np.maximum(max_d2, d2), max_d2)
    sel = valid_out & full_nb
    radius[sel] = 1.5 * np.sqrt(max_d2[sel])
    return normal, radius, valid_out


class Preprocessor:
    """Streaming preprocessor with the +-4 frame temporal lookahead.

    push() buffers raw frames; completed DepthFrames come out with a delay
    of up to temporal_window frames. Call flush() at end of stream.
    """

    def __init__(self, K: CameraIntrinsics, cfg: PreprocessConfig = None):
        self.K = K
        self.cfg = cfg or PreprocessConfig()
        self._frames = {}  # absolute frame index -> (depth_stageA, color, pose, t)
        self._pushed = 0
        self._next = 0  # next absolute index to finalize

    def _stage_a(self, depth_m):
        cfg = self.cfg
        d = depth_m.astype(np.float64, copy=True)
        d[d < 0] = 0.0
        if cfg.enable_cutoff:
            d = cutoff_far(d, cfg.max_depth)
        if cfg.enable_bilateral:
            d = bilateral_filter(d, cfg.bilateral_sigma_xy, cfg.bilateral_sigma_z_factor)
        return d

    def _finalize(self, idx):
        cfg = self.cfg
        depth, color, pose, t = self._frames[idx]
        valid = depth > 0
        if cfg.enable_temporal:
            lo = max(0, idx - cfg.temporal_window)
            hi = min(self._pushed, idx + cfg.temporal_window + 1)
            window = [(self._frames[i][0], self._frames[i][2]) for i in range(lo, hi)]
            if len(window) > 1:
                keep = temporal_outlier_filter(
                    window, idx - lo, self.K, cfg.temporal_tolerance
                )
                valid &= keep
        if cfg.enable_erosion:
            valid = erode_near_invalid(valid, cfg.erosion_px)
        d = np.where(valid, depth, 0.0)
        normal, radius, valid = compute_normals_and_radii(
            d, valid, self.K, cfg.max_normal_view_angle
        )
        d = np.where(valid, d, 0.0)
        return DepthFrame(
            depth=d,
            color=color,
            normal=normal,
            radius=radius,
            valid=valid,
            pose=pose,
            t=t,
            intrinsics=self.K,
        )

    def push(self, depth_m, color, pose, t):
        """Feed one raw frame (depth in meters); returns finalized frames."""
        self._frames[self._pushed] = (self._stage_a(depth_m), color, pose, t)
        self._pushed += 1
        out = []
        # finalize once the full forward lookahead is buffered
        while self._next + self.cfg.temporal_window < self._pushed:
            out.append(self._finalize(self._next))
            self._next += 1
            self._trim()
        return out

    def _trim(self):
        low = self._next - self.cfg.temporal_window
        for i in list(self._frames):
            if i < low:
                del self._frames[i]

    def flush(self):
        """Finalize remaining frames (underfull lookahead at stream end)."""
        out = []
        while self._next < self._pushed:
            out.append(self._finalize(self._next))
            self._next += 1
        self._frames.clear()
        return out
