"""Measurement integration: surfel creation, weighted-average updates,
confidence decay and replacement of conflicting surfels, and merging of
near-duplicate supported surfels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .association import CONFLICTING, AssociationResult
from .cloud import TRI_FREE, Surfel, SurfelCloud
from .preprocess import DepthFrame

SIGMA_MAX = 5.0


@dataclass
class FusionConfig:
    sigma_max: float = SIGMA_MAX
    merge_dist_factor: float = 0.5  # fraction of min radius
    merge_normal_angle: float = 20.0  # degrees


def create_surfel(frame: DepthFrame, pixel, cloud: SurfelCloud = None) -> Surfel:
    """Surfel from one pixel (world frame). Returns None if the pixel has
    no radius (incomplete 8-neighborhood). Appends to cloud if given."""
    x, y = pixel
    if not frame.valid[y, x] or frame.radius[y, x] <= 0:
        return None
    z = frame.depth[y, x]
    K = frame.intrinsics
    p_cam = np.array(
        [(x + 0.5 - K.cx) * z / K.fx, (y + 0.5 - K.cy) * z / K.fy, z]
    )
    p = frame.pose.transform(p_cam)
    n = frame.pose.rotate(frame.normal[y, x])
    c = frame.color[y, x]
    r = float(frame.radius[y, x])
    if cloud is not None:
        sid = cloud.create(p, n, c, r, frame.t)
        return cloud.get(sid)
    return Surfel(
        p=p, p_bar=p.copy(), n=n, c=np.asarray(c, dtype=np.float64),
        sigma=1.0, r=r, t0=frame.t, t=frame.t,
        neighbors=np.full(4, -1, dtype=np.int64),
    )


def integrate_measurement(surfel: Surfel, p_m, n_m, c_m, w, t=None,
                          radius=0.0, sigma_max=SIGMA_MAX) -> Surfel:
    """Confidence-weighted average update of one surfel (in place)."""
    sig = surfel.sigma
    denom = sig + w
    surfel.p = (sig * surfel.p + w * np.asarray(p_m)) / denom
    n_hat = (sig * surfel.n + w * np.asarray(n_m)) / denom
    norm = np.linalg.norm(n_hat)
    if norm > 1e-12:
        surfel.n = n_hat / norm
    surfel.c = (sig * surfel.c + w * np.asarray(c_m)) / denom
    surfel.sigma = min(sig + w, sigma_max)
    if t is not None:
        surfel.t = t
    if radius > 0 and radius < surfel.r:
        surfel.r = radius
    return surfel


def _unproject_pixels(px, py, depth_img, K):
    z = depth_img[py, px]
    out = np.empty((len(px), 3))
    out[:, 0] = (px + 0.5 - K.cx) * z / K.fx
    out[:, 1] = (py + 0.5 - K.cy) * z / K.fy
    out[:, 2] = z
    return out


def integrate_frame(cloud: SurfelCloud, frame: DepthFrame,
                    assoc: AssociationResult, config: FusionConfig,
                    depth_blended=None):
    """Integrate one frame's measurements into the cloud.

    Supported surfels are averaged with each supporting measurement using
    weight 1/|supporters of that pixel|; conflicting surfels lose one
    confidence point and are replaced in place at zero. Pixels with no
    supported and no conflicting surfel spawn new surfels.

    Returns (created_ids, replaced_ids, freed_ids).
    """
    K = frame.intrinsics
    depth = frame.depth if depth_blended is None else depth_blended
    pose = frame.pose

    # supported surfels: one vectorized pass per candidate-pixel slot
    for ids, px, py in assoc.support_pairs:
        if len(ids) == 0:
            continue
        w_m = 1.0 / assoc.support_count[py, px]
        p_m = pose.transform(_unproject_pixels(px, py, depth, K))
        n_m = pose.rotate(frame.normal[py, px])
        c_m = frame.color[py, px]
        sig = cloud.sigma[ids]
        denom = (sig + w_m)[:, None]
        cloud.p[ids] = (sig[:, None] * cloud.p[ids] + w_m[:, None] * p_m) / denom
        n_hat = (sig[:, None] * cloud.n[ids] + w_m[:, None] * n_m) / denom
        norms = np.linalg.norm(n_hat, axis=1)
        ok = norms > 1e-12
        upd = ids[ok]
        cloud.n[upd] = n_hat[ok] / norms[ok][:, None]
        cloud.c[ids] = (sig[:, None] * cloud.c[ids] + w_m[:, None] * c_m) / denom
        cloud.sigma[ids] = np.minimum(sig + w_m, config.sigma_max)
        cloud.t[ids] = frame.t
        r_img = frame.radius[py, px]
        shrink = (r_img > 0) & (r_img < cloud.r[ids])
        cloud.r[ids[shrink]] = r_img[shrink]
        cloud.moved_since_mesh.update(int(i) for i in ids)

    # conflicting surfels: decay and replace at zero confidence
    replaced, freed = [], []
    conflict_ids = sorted(s for s, c in assoc.cls.items() if c == CONFLICTING)
    for sid in conflict_ids:
        cloud.sigma[sid] -= 1.0
        if cloud.sigma[sid] > 0:
            continue
        x, y = assoc.conflict_pixel[sid]
        if frame.valid[y, x] and frame.radius[y, x] > 0:
            z = depth[y, x]
            p_cam = np.array(
                [(x + 0.5 - K.cx) * z / K.fx, (y + 0.5 - K.cy) * z / K.fy, z]
            )
            p = pose.transform(p_cam)
            cloud.p[sid] = p
            cloud.p_bar[sid] = p
            cloud.n[sid] = pose.rotate(frame.normal[y, x])
            cloud.c[sid] = frame.color[y, x]
            cloud.sigma[sid] = 1.0
            cloud.r[sid] = frame.radius[y, x]
            cloud.t0[sid] = frame.t
            cloud.t[sid] = frame.t
            cloud.neighbors[sid] = -1
            cloud.tri_state[sid] = TRI_FREE
            cloud.replaced_since_mesh.add(sid)
            replaced.append(sid)
        else:
            # measurement cannot seed a proper surfel (no radius); drop slot
            cloud.free(sid)
            freed.append(sid)

    # new surfels for pixels with neither supported nor conflicting surfels
    spawn = (
        frame.valid
        & (frame.radius > 0)
        & (assoc.support_count == 0)
        & ~assoc.has_conflict
    )
    created = []
    ys, xs = np.nonzero(spawn)
    if len(ys):
        p_m = pose.transform(_unproject_pixels(xs, ys, depth, K))
        n_m = pose.rotate(frame.normal[ys, xs])
        c_m = frame.color[ys, xs]
        r_m = frame.radius[ys, xs]
        created = [int(i) for i in cloud.create_many(p_m, n_m, c_m, r_m, frame.t)]
    return created, replaced, freed


def merge_similar(cloud: SurfelCloud, assoc: AssociationResult,
                  config: FusionConfig):
    """Merge pairs of surfels supported by the same pixel whose positions
    and normals nearly coincide. Returns list of (winner, loser) ids."""
    cos_thresh = math.cos(math.radians(config.merge_normal_angle))
    merged = []
    for _, sids in sorted(assoc.supporters_of_pixel.items()):
        if len(sids) < 2:
            continue
        for i in range(len(sids)):
            a = sids[i]
            if not cloud.alive[a]:
                continue
            for j in range(i + 1, len(sids)):
                b = sids[j]
                if not cloud.alive[b] or not cloud.alive[a]:
                    continue
                dist = np.linalg.norm(cloud.p[a] - cloud.p[b])
                if dist >= config.merge_dist_factor * min(cloud.r[a], cloud.r[b]):
                    continue
                if np.dot(cloud.n[a], cloud.n[b]) < cos_thresh:
                    continue
                win, lose = (a, b) if (cloud.sigma[a], -a) >= (cloud.sigma[b], -b) else (b, a)
                wa, wb = cloud.sigma[win], cloud.sigma[lose]
                denom = wa + wb
                cloud.p[win] = (wa * cloud.p[win] + wb * cloud.p[lose]) / denom
                cloud.p_bar[win] = (wa * cloud.p_bar[win] + wb * cloud.p_bar[lose]) / denom
                n_hat = (wa * cloud.n[win] + wb * cloud.n[lose]) / denom
                norm = np.linalg.norm(n_hat)
                if norm > 1e-12:
                    cloud.n[win] = n_hat / norm
                cloud.c[win] = (wa * cloud.c[win] + wb * cloud.c[lose]) / denom
                cloud.sigma[win] = min(denom, config.sigma_max)
                cloud.r[win] = min(cloud.r[win], cloud.r[lose])
                cloud.t[win] = max(cloud.t[win], cloud.t[lose])
                cloud.t0[win] = min(cloud.t0[win], cloud.t0[lose])
                cloud.free(lose)
                cloud.moved_since_mesh.add(int(win))
                merged.append((int(win), int(lose)))
                if lose == a:
                    break
    return merged
