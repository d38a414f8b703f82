"""Incremental mesh maintenance under surfel motion.

Triangles touching surfels that moved since the last meshing iteration
are re-validated; invalid ones are deleted together with all triangles
connected to surfels near their corners, and the affected surfels are
scheduled for re-triangulation. New surfels likewise clear the triangles
of nearby existing surfels so the region can grow around them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import SurfelCloud
from .mesh import TriangleMesh
from .mesher import recompute_state


@dataclass
class RemeshConfig:
    stretch_factor: float = 1.5  # of the maximum extended search radius 2*r
    normal_compat_angle: float = 60.0  # degrees, mirrors the mesher

    def __post_init__(self):
        if self.stretch_factor < 1:
            raise ValueError("stretch_factor must be >= 1")


def triangle_valid(tri, cloud: SurfelCloud, config: RemeshConfig = None):
    """A triangle stays if one of its vertex surfels could still reach
    the other two: both within stretch_factor * 2 * r_s, normals within
    the compatibility cone of n_s, and the triangle's counterclockwise
    normal not opposing n_s. Nearby-surfel/intersection checks are
    deliberately not performed (too many spatial searches)."""
    config = config or RemeshConfig()
    a, b, c = tri
    pa, pb, pc = cloud.p_bar[a], cloud.p_bar[b], cloud.p_bar[c]
    tn = np.cross(pb - pa, pc - pa)
    cos_compat = math.cos(math.radians(config.normal_compat_angle))
    for s, o1, o2 in ((a, b, c), (b, c, a), (c, a, b)):
        reach = config.stretch_factor * 2.0 * cloud.r[s]
        ps, n_s = cloud.p_bar[s], cloud.n[s]
        if np.linalg.norm(cloud.p_bar[o1] - ps) > reach:
            continue
        if np.linalg.norm(cloud.p_bar[o2] - ps) > reach:
            continue
        if np.dot(cloud.n[o1], n_s) < cos_compat:
            continue
        if np.dot(cloud.n[o2], n_s) < cos_compat:
            continue
        if np.dot(tn, n_s) < 0:
            continue
        return True
    return False


def triangles_valid(tris, cloud: SurfelCloud, config: RemeshConfig = None):
    """Vectorized triangle_valid over an (m, 3) id array."""
    config = config or RemeshConfig()
    tris = np.asarray(tris, dtype=np.int64)
    if len(tris) == 0:
        return np.zeros(0, dtype=bool)
    cos_compat = math.cos(math.radians(config.normal_compat_angle))
    P = cloud.p_bar[tris]  # (m, 3, 3)
    N = cloud.n[tris]
    tn = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    ok = np.zeros(len(tris), dtype=bool)
    for k in range(3):
        s, o1, o2 = k, (k + 1) % 3, (k + 2) % 3
        reach = config.stretch_factor * 2.0 * cloud.r[tris[:, s]]
        d1 = np.linalg.norm(P[:, o1] - P[:, s], axis=1)
        d2 = np.linalg.norm(P[:, o2] - P[:, s], axis=1)
        c1 = np.einsum("ij,ij->i", N[:, o1], N[:, s])
        c2 = np.einsum("ij,ij->i", N[:, o2], N[:, s])
        tno = np.einsum("ij,ij->i", tn, N[:, s])
        ok |= (
            (d1 <= reach) & (d2 <= reach)
            & (c1 >= cos_compat) & (c2 >= cos_compat)
            & (tno >= 0)
        )
    return ok


def defer_inactive(cloud: SurfelCloud, moved_ids, now, active_window=None):
    """Split moved surfels into (check now, check once active again)."""
    if active_window is None:
        return list(moved_ids), []
    check, later = [], []
    for sid in moved_ids:
        if cloud.alive[sid] and now - cloud.t[sid] > active_window:
            later.append(sid)
        else:
            check.append(sid)
    return check, later


def remesh_pass(cloud: SurfelCloud, tree, mesh: TriangleMesh,
                moved, replaced, created, config: RemeshConfig = None,
                freed=()):
    """Delete triangles invalidated by motion, new surfels, or removed
    surfels.

    Returns (deleted_count, scheduled_ids). Scheduled surfels must be
    added to the next meshing queue.
    """
    config = config or RemeshConfig()
    touched = set(moved) | set(replaced)
    candidates = set()
    for sid in touched:
        if cloud.alive[sid]:
            candidates.update(mesh.triangles_of(sid))
    # replaced slots may still carry triangles of the surfel they
    # replaced, and freed slots those of the removed surfel; both stale
    stale = set()
    for sid in list(replaced) + sorted(freed):
        stale.update(mesh.triangles_of(sid))

    deleted = 0
    scheduled = set()
    affected = set()  # surfels losing triangles

    cand_list = sorted(candidates)
    if cand_list:
        tris = np.array([mesh.triangles[t] for t in cand_list], dtype=np.int64)
        valid = triangles_valid(tris, cloud, config)
    else:
        valid = np.zeros(0, dtype=bool)

    invalid_corners = set()
    to_delete = set(stale)
    for tid, ok in zip(cand_list, valid):
        if not ok:
            to_delete.add(tid)
            invalid_corners.update(mesh.triangles[tid])

    # one ring of collateral deletion: surfels near the corners of
    # invalid triangles lose all their triangles and are re-queued
    cleared = set()
    for v in sorted(invalid_corners):
        if not cloud.alive[v]:
            continue
        for nb, _ in tree.radius_search(cloud.p_bar[v], cloud.r[v]):
            if cloud.alive[nb] and nb not in cleared:
                cleared.add(nb)
                to_delete.update(mesh.triangles_of(nb))
                scheduled.add(nb)

    # new surfels clear the triangles of everything within their radius
    for u in created:
        if not cloud.alive[u]:
            continue
        scheduled.add(u)
        for nb, _ in tree.radius_search(cloud.p_bar[u], cloud.r[u]):
            if nb == u or not cloud.alive[nb]:
                continue
            scheduled.add(nb)
            if nb not in cleared:
                cleared.add(nb)
                to_delete.update(mesh.triangles_of(nb))

    for tid in to_delete:
        tri = mesh.triangles.get(tid)
        if tri is None:
            continue
        mesh.remove_triangle(tid)
        deleted += 1
        affected.update(tri)

    for v in affected:
        if cloud.alive[v]:
            recompute_state(cloud, mesh, v)
            scheduled.add(v)
    scheduled = {s for s in scheduled if cloud.alive[s]}
    return deleted, scheduled
