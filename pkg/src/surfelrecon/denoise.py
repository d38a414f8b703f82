"""Surfel regularization.

Maintains a denoised position per surfel by gradient descent on

    C = sum_s ||p_bar_s - p_s||^2
        + w_reg * (1/|N_s|) * sum_{n in N_s} (n_s . (p_bar_n - p_bar_s))^2

with one synchronous (Jacobi) step per frame over the recently updated
surfels. Neighbor sets come from the data association's index image.
Loop-closure position offsets are smoothed by neighbor averaging before
being applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import SUPPORTED, AssociationResult
from .cloud import SurfelCloud


@dataclass
class DenoiseConfig:
    w_reg: float = 10.0
    active_window: int = 30  # frames
    step_scale: float = 0.5
    deform_smooth_iters: int = 100
    neighbor_reject_factor: float = 2.0  # multiples of r_s


def update_neighbors(cloud: SurfelCloud, assoc: AssociationResult,
                     config: DenoiseConfig = None):
    """Refresh each supported surfel's neighbor set from the index image.

    Candidates are the existing neighbors plus the index-image entries in
    the 4-neighborhood of the surfel's projected pixel; the up-to-4
    closest within 2 * r_s are kept (by raw position distance).
    """
    config = config or DenoiseConfig()
    sel = assoc.proj_cls == SUPPORTED
    ids = assoc.proj_ids[sel]
    if len(ids) == 0:
        return
    px = assoc.proj_px[sel]
    py = assoc.proj_py[sel]
    h, w = assoc.index_image.shape

    cand = np.full((len(ids), 8), -1, dtype=np.int64)
    cand[:, :4] = cloud.neighbors[ids]
    for k, (dx, dy) in enumerate(((1, 0), (-1, 0), (0, 1), (0, -1))):
        qx, qy = px + dx, py + dy
        ok = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        col = np.full(len(ids), -1, dtype=np.int64)
        col[ok] = assoc.index_image[qy[ok], qx[ok]]
        cand[:, 4 + k] = col

    valid = (cand >= 0)
    valid &= np.where(valid, cloud.alive[np.where(valid, cand, 0)], False)
    valid &= cand != ids[:, None]
    # drop duplicate candidate ids within each row (keep first occurrence)
    order = np.argsort(cand, axis=1, kind="stable")
    sorted_cand = np.take_along_axis(cand, order, axis=1)
    dup_sorted = np.zeros_like(valid)
    dup_sorted[:, 1:] = sorted_cand[:, 1:] == sorted_cand[:, :-1]
    dup = np.zeros_like(valid)
    np.put_along_axis(dup, order, dup_sorted, axis=1)
    valid &= ~dup

    pos = cloud.p[np.where(valid, cand, 0)]
    dist = np.linalg.norm(pos - cloud.p[ids][:, None, :], axis=2)
    dist = np.where(valid, dist, np.inf)
    dist[dist > config.neighbor_reject_factor * cloud.r[ids][:, None]] = np.inf

    pick = np.argsort(dist, axis=1, kind="stable")[:, :4]
    picked = np.take_along_axis(cand, pick, axis=1)
    picked_d = np.take_along_axis(dist, pick, axis=1)
    picked[~np.isfinite(picked_d)] = -1
    cloud.neighbors[ids] = picked


def _neighbor_arrays(cloud, ids, reject_factor=2.0):
    nb = cloud.neighbors[ids]
    mask = nb >= 0
    safe = np.where(mask, nb, 0)
    mask &= np.where(mask, cloud.alive[safe], False)
    # a stored neighbor slot may have been replaced in place by an
    # unrelated surfel; re-apply the selection distance gate so stale
    # links cannot inject arbitrarily large residuals
    dist = np.linalg.norm(cloud.p[safe] - cloud.p[ids][:, None, :], axis=2)
    mask &= dist <= reject_factor * cloud.r[ids][:, None]
    return np.where(mask, nb, 0), mask


def cost(cloud: SurfelCloud, w_reg=10.0, reject_factor=2.0):
    """Exact value of the denoising objective over live surfels."""
    ids = cloud.live_ids()
    if len(ids) == 0:
        return 0.0
    data = np.sum((cloud.p_bar[ids] - cloud.p[ids]) ** 2)
    nb, mask = _neighbor_arrays(cloud, ids, reject_factor)
    k = mask.sum(axis=1)
    resid = np.einsum(
        "ij,ikj->ik", cloud.n[ids], cloud.p_bar[nb] - cloud.p_bar[ids][:, None, :]
    )
    resid = np.where(mask, resid, 0.0)
    has = k > 0
    reg = np.sum(np.sum(resid[has] ** 2, axis=1) / k[has])
    return float(data + w_reg * reg)


def cost_gradient(cloud: SurfelCloud, config: DenoiseConfig = None):
    """Analytic dC/dp_bar per live surfel and the per-surfel step sizes.

    Returns (ids, grad, step): arrays aligned with ids.
    """
    config = config or DenoiseConfig()
    w_reg = config.w_reg
    ids = cloud.live_ids()
    n_l = len(ids)
    grad = 2.0 * (cloud.p_bar[ids] - cloud.p[ids])
    slot_of = np.full(cloud.size, -1, dtype=np.int64)
    slot_of[ids] = np.arange(n_l)

    nb, mask = _neighbor_arrays(cloud, ids, config.neighbor_reject_factor)
    k = mask.sum(axis=1)
    safe_k = np.maximum(k, 1)
    resid = np.einsum(
        "ij,ikj->ik", cloud.n[ids], cloud.p_bar[nb] - cloud.p_bar[ids][:, None, :]
    )
    resid = np.where(mask, resid, 0.0)
    # own regularizer: d/dp_bar_s of (1/k) sum (n_s . (p_bar_n - p_bar_s))^2
    grad += (-2.0 * w_reg / safe_k * resid.sum(axis=1))[:, None] * cloud.n[ids]
    # back contributions: s appearing as neighbor n of surfel i
    contrib = (2.0 * w_reg / safe_k)[:, None, None] * resid[:, :, None] * (
        cloud.n[ids][:, None, :]
    )
    tgt = slot_of[nb]
    flat_ok = mask & (tgt >= 0)
    np.add.at(grad, tgt[flat_ok], contrib[flat_ok])

    denom = np.full(n_l, 1.0 + w_reg)
    wpart = np.where(mask, (w_reg / safe_k)[:, None], 0.0)
    np.add.at(denom, tgt[flat_ok], wpart[flat_ok])
    step = config.step_scale / denom
    return ids, grad, step


def denoise_iteration(cloud: SurfelCloud, now, config: DenoiseConfig = None):
    """One gradient-descent step on the denoised positions of surfels whose
    last update lies within the active window. Returns the moved ids."""
    config = config or DenoiseConfig()
    ids, grad, step = cost_gradient(cloud, config)
    if len(ids) == 0:
        return np.zeros(0, dtype=np.int64)
    active = now - cloud.t[ids] <= config.active_window
    upd = ids[active]
    delta = step[active][:, None] * grad[active]
    cloud.p_bar[upd] -= delta
    moved = upd[np.any(delta != 0.0, axis=1)]
    cloud.moved_since_mesh.update(int(i) for i in moved)
    return moved


def apply_deformation(cloud: SurfelCloud, offsets: dict,
                      config: DenoiseConfig = None):
    """Apply loop-closure position offsets after neighbor smoothing.

    offsets maps surfel id -> 3-vector; missing surfels implicitly get a
    zero offset. The offsets are averaged among neighbor sets for
    deform_smooth_iters synchronous iterations (surfels with no neighbors
    keep theirs), then added to both raw and denoised positions.
    Raises KeyError if an offset references a dead or unknown surfel.
    """
    config = config or DenoiseConfig()
    for sid in offsets:
        if sid < 0 or sid >= cloud.size or not cloud.alive[sid]:
            raise KeyError(f"deformation offset for unknown surfel {sid}")
    ids = cloud.live_ids()
    if len(ids) == 0:
        return np.zeros(0, dtype=np.int64)
    delta = np.zeros((cloud.size, 3))
    for sid, off in offsets.items():
        delta[sid] = off

    nb, mask = _neighbor_arrays(cloud, ids, config.neighbor_reject_factor)
    k = mask.sum(axis=1)
    has = k > 0
    safe_k = np.maximum(k, 1)
    for _ in range(config.deform_smooth_iters):
        avg = np.where(mask[:, :, None], delta[nb], 0.0).sum(axis=1) / safe_k[:, None]
        new = delta[ids].copy()
        new[has] = avg[has]
        delta[ids] = new

    moved = ids[np.any(delta[ids] != 0.0, axis=1)]
    cloud.p[moved] += delta[moved]
    cloud.p_bar[moved] += delta[moved]
    cloud.delta_p[ids] = 0.0
    cloud.moved_since_mesh.update(int(i) for i in moved)
    return moved
