"""Per-frame data association between the surfel cloud and a depth image.

Each active surfel is projected into the frame and tested against up to
two candidate pixels: the pixel it projects to and the 4-neighbor closest
to the sub-pixel position. Against each candidate measurement of depth z
it is conflicting (in front of [(1-g)z, (1+g)z]), occluded (behind it, or
normal facing away / too different from the measurement normal), or
supported. Support wins over conflict wins over occlusion when the two
candidates disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import SurfelCloud
from .preprocess import DepthFrame

# surfel classes
UNOBSERVED = 0
SUPPORTED = 1
CONFLICTING = 2
OCCLUDED = 3

_CLASS_NAMES = {
    UNOBSERVED: "unobserved",
    SUPPORTED: "supported",
    CONFLICTING: "conflicting",
    OCCLUDED: "occluded",
}


@dataclass
class AssocConfig:
    gamma: float = 0.05
    occlusion_normal_angle: float = 60.0  # degrees
    active_window: int | None = None  # frames; None = unlimited


class AssociationResult:
    def __init__(self, shape):
        h, w = shape
        self.cls = {}  # surfel id -> class code (active, in-frustum surfels only)
        self.index_image = np.full((h, w), -1, dtype=np.int64)
        self.surfel_depth_image = np.zeros((h, w))
        self.support_count = np.zeros((h, w), dtype=np.int64)
        self.has_conflict = np.zeros((h, w), dtype=bool)
        # supporting (surfel, pixel) pairs, split by candidate pass so that
        # each surfel appears at most once per pass
        self.support_pairs = []  # list of (ids, px, py) per pass
        self.conflict_pixel = {}  # surfel id -> (x, y) pixel for replacement
        self.supporters_of_pixel = {}  # (x, y) -> list of surfel ids
        # projected pixel of every classified surfel, as parallel arrays
        self.proj_ids = np.zeros(0, dtype=np.int64)
        self.proj_px = np.zeros(0, dtype=np.int64)
        self.proj_py = np.zeros(0, dtype=np.int64)
        self.proj_cls = np.zeros(0, dtype=np.int8)

    def class_name(self, sid):
        return _CLASS_NAMES[self.cls[sid]]


def is_active(t_s, now, config: AssocConfig):
    """Whether a surfel last updated at t_s takes part in association."""
    if config.active_window is None:
        return True
    return now - t_s <= config.active_window


def associate(
    cloud: SurfelCloud, frame: DepthFrame, config: AssocConfig, seed=0
) -> AssociationResult:
    K = frame.intrinsics
    h, w = frame.depth.shape
    res = AssociationResult((h, w))

    ids = cloud.live_ids()
    if config.active_window is not None and len(ids):
        ids = ids[frame.t - cloud.t[ids] <= config.active_window]
    if len(ids) == 0:
        return res

    pose = frame.pose
    pc = pose.inverse_transform(cloud.p[ids])
    z_s = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * pc[:, 0] / z_s + K.cx - 0.5
        v = K.fy * pc[:, 1] / z_s + K.cy - 0.5
    visible = (z_s > 0) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    ids = ids[visible]
    if len(ids) == 0:
        return res
    pc, z_s, u, v = pc[visible], z_s[visible], u[visible], v[visible]

    px0 = np.clip(np.rint(u).astype(np.int64), 0, w - 1)
    py0 = np.clip(np.rint(v).astype(np.int64), 0, h - 1)
    du = u - px0
    dv = v - py0
    step_x = np.where(np.abs(du) >= np.abs(dv), np.where(du >= 0, 1, -1), 0)
    step_y = np.where(np.abs(du) >= np.abs(dv), 0, np.where(dv >= 0, 1, -1))
    px1 = px0 + step_x
    py1 = py0 + step_y

    n_cam = pose.inverse_rotate(cloud.n[ids])
    view = pc / np.linalg.norm(pc, axis=1)[:, None]
    # normal pointing away from the camera center
    away = np.einsum("ij,ij->i", n_cam, view) >= 0
    cos_thresh = math.cos(math.radians(config.occlusion_normal_angle))
    g = config.gamma

    n_sf = len(ids)
    sup = np.zeros((2, n_sf), dtype=bool)
    con = np.zeros((2, n_sf), dtype=bool)
    cand_valid = np.zeros((2, n_sf), dtype=bool)
    cand_px = [px0, px1]
    cand_py = [py0, py1]
    for k in range(2):
        px, py = cand_px[k], cand_py[k]
        in_b = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        pxc = np.clip(px, 0, w - 1)
        pyc = np.clip(py, 0, h - 1)
        z_m = frame.depth[pyc, pxc]
        okay = in_b & frame.valid[pyc, pxc] & (z_m > 0)
        cand_valid[k] = okay
        conflict = okay & (z_s < (1 - g) * z_m)
        n_m = frame.normal[pyc, pxc]
        cos_nm = np.einsum("ij,ij->i", n_cam, n_m)
        behind = z_s > (1 + g) * z_m
        occluded = okay & ~conflict & (behind | away | (cos_nm < cos_thresh))
        sup[k] = okay & ~conflict & ~occluded
        con[k] = conflict

    any_valid = cand_valid.any(axis=0)
    supported = sup.any(axis=0)
    conflicting = ~supported & con.any(axis=0)
    occluded = ~supported & ~conflicting & any_valid

    cls = np.full(n_sf, UNOBSERVED, dtype=np.int8)
    cls[supported] = SUPPORTED
    cls[conflicting] = CONFLICTING
    cls[occluded] = OCCLUDED
    res.cls = {int(s): int(c) for s, c in zip(ids, cls)}
    res.proj_ids, res.proj_px, res.proj_py, res.proj_cls = ids, px0, py0, cls

    # per-pixel support bookkeeping
    pair_pix = []
    pair_ids = []
    pair_depth = []
    for k in range(2):
        mask = sup[k]
        res.support_pairs.append(
            (ids[mask], cand_px[k][mask], cand_py[k][mask])
        )
        pair_pix.append(cand_py[k][mask] * w + cand_px[k][mask])
        pair_ids.append(ids[mask])
        pair_depth.append(z_s[mask])
    pix = np.concatenate(pair_pix)
    sids = np.concatenate(pair_ids)
    depths = np.concatenate(pair_depth)
    if len(pix):
        np.add.at(res.support_count.reshape(-1), pix, 1)
        dsum = np.zeros(h * w)
        np.add.at(dsum, pix, depths)
        cnt = res.support_count.reshape(-1)
        nz = cnt > 0
        res.surfel_depth_image.reshape(-1)[nz] = dsum[nz] / cnt[nz]

        order = np.lexsort((sids, pix))
        pix_s, sid_s = pix[order], sids[order]
        starts = np.flatnonzero(np.r_[True, pix_s[1:] != pix_s[:-1]])
        counts = np.diff(np.r_[starts, len(pix_s)])
        rng = np.random.Generator(np.random.PCG64(seed ^ frame.t))
        picks = starts + rng.integers(0, counts)
        sel_pix = pix_s[starts]
        res.index_image.reshape(-1)[sel_pix] = sid_s[picks]
        for st, ct, lp in zip(starts, counts, sel_pix):
            res.supporters_of_pixel[(int(lp % w), int(lp // w))] = [
                int(x) for x in sid_s[st : st + ct]
            ]

    # conflict pixels for surfels that are conflicting overall
    for k in range(2):
        mask = con[k] & conflicting
        for i in np.flatnonzero(mask):
            sid = int(ids[i])
            q = (int(cand_px[k][i]), int(cand_py[k][i]))
            res.has_conflict[q[1], q[0]] = True
            res.conflict_pixel.setdefault(sid, q)

    return res
