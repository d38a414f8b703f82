"""Greedy local triangulation of the denoised surfel cloud.

Each queued surfel gathers neighbors within its radius (extended up to
2 * r_s for front surfels whose existing mesh edges reach further),
projects them onto its tangent plane, removes candidates hidden behind
existing mesh edges in that 2D view, sorts the rest by polar angle and
emits a triangle fan, skipping angular gaps that are too wide and
thinning out near-collinear neighbors. Triangulation states: free (no
incident triangles), front (mesh boundary), completed (closed fan).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import TRI_COMPLETED, TRI_FREE, TRI_FRONT, SurfelCloud
from .mesh import TriangleMesh

VISIBILITY_EPS = 1e-12


@dataclass
class MeshingConfig:
    normal_compat_angle: float = 60.0  # degrees
    narrow_angle: float = 10.0
    gap_angle: float = 120.0
    boundary_extend_factor: float = 2.0  # multiples of r_s

    def __post_init__(self):
        if not 0 < self.narrow_angle < self.gap_angle < 360:
            raise ValueError("need 0 < narrow_angle < gap_angle < 360")


def tangent_basis(n):
    """Right-handed orthonormal (e1, e2) spanning the plane orthogonal
    to n, chosen deterministically."""
    ax, ay, az = abs(n[0]), abs(n[1]), abs(n[2])
    if ax <= ay and ax <= az:
        a = np.array([1.0, 0.0, 0.0])
    elif ay <= az:
        a = np.array([0.0, 1.0, 0.0])
    else:
        a = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def _cross2(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def segments_properly_intersect(p1, p2, p3, p4, eps=VISIBILITY_EPS):
    """Strict crossing of open segments p1-p2 and p3-p4; touching or
    collinear overlap does not count."""
    d1 = _cross2(p3[0], p3[1], p4[0], p4[1], p1[0], p1[1])
    d2 = _cross2(p3[0], p3[1], p4[0], p4[1], p2[0], p2[1])
    if not ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)):
        return False
    d3 = _cross2(p1[0], p1[1], p2[0], p2[1], p3[0], p3[1])
    d4 = _cross2(p1[0], p1[1], p2[0], p2[1], p4[0], p4[1])
    return (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)


def build_queue(cloud: SurfelCloud, created, replaced, moved, scheduled=()):
    """Surfels to (re)triangulate: new ones, moved free/front ones, and
    explicitly (re)scheduled ones. Moved completed surfels are left to
    the remesher. Returns live ids in ascending order."""
    queue = set()
    for sid in created:
        queue.add(sid)
    for sid in replaced:
        queue.add(sid)
    for sid in moved:
        if cloud.alive[sid] and cloud.tri_state[sid] != TRI_COMPLETED:
            queue.add(sid)
    for sid in scheduled:
        queue.add(sid)
    return sorted(s for s in queue if cloud.alive[s])


def recompute_state(cloud: SurfelCloud, mesh: TriangleMesh, sid):
    tris = mesh.triangles_of(sid)
    if not tris:
        cloud.tri_state[sid] = TRI_FREE
        return TRI_FREE
    ring = mesh.vertex_ring(sid)
    closed = len(tris) >= 3 and all(c == 2 for c in ring.values())
    state = TRI_COMPLETED if closed else TRI_FRONT
    cloud.tri_state[sid] = state
    return state


def triangulate_surfel(sid, cloud: SurfelCloud, tree, mesh: TriangleMesh,
                       config: MeshingConfig):
    """Attempt to (re)triangulate around one surfel.

    Returns (done, new_triangle_ids); done=False means the attempt was
    aborted (front neighbors out of reach or too few visible candidates)
    and the surfel should stay queued.
    """
    p_s = cloud.p_bar[sid]
    n_s = cloud.n[sid]
    r_s = float(cloud.r[sid])
    radius = r_s

    ring = mesh.vertex_ring(sid)
    if ring:
        ring_ids = [v for v in ring if cloud.alive[v]]
        if ring_ids:
            dmax = max(
                float(np.linalg.norm(cloud.p_bar[v] - p_s)) for v in ring_ids
            )
            if dmax > radius:
                if dmax > config.boundary_extend_factor * r_s:
                    return False, []
                radius = dmax

    found = tree.radius_search(p_s, radius)
    cos_compat = math.cos(math.radians(config.normal_compat_angle))
    cand = [
        c
        for c, _ in found
        if c != sid and cloud.alive[c]
        and float(np.dot(cloud.n[c], n_s)) >= cos_compat
    ]
    if len(cand) < 2:
        return False, []

    e1, e2 = tangent_basis(n_s)
    pts = {}
    for c in cand:
        d = cloud.p_bar[c] - p_s
        pts[c] = (float(np.dot(d, e1)) / r_s, float(np.dot(d, e2)) / r_s)

    # existing mesh edges between candidates block visibility
    cand_set = set(cand)
    edges = set()
    for c in cand:
        for tid in mesh.triangles_of(c):
            a, b, d = mesh.triangles[tid]
            for u, v in ((a, b), (b, d), (d, a)):
                if u in cand_set and v in cand_set:
                    edges.add((u, v) if u < v else (v, u))
    origin = (0.0, 0.0)
    visible = []
    for c in cand:
        q = pts[c]
        blocked = False
        for u, v in edges:
            if c == u or c == v:
                continue
            if segments_properly_intersect(origin, q, pts[u], pts[v]):
                blocked = True
                break
        if not blocked:
            visible.append(c)
    if len(visible) < 2:
        return False, []

    ang = {c: math.atan2(pts[c][1], pts[c][0]) for c in visible}
    order = sorted(visible, key=lambda c: (ang[c], c))

    # thin out near-collinear neighbors: of two candidates closer than
    # narrow_angle apart, drop the farther one unless it is already
    # connected to sid in the mesh
    narrow = math.radians(config.narrow_angle)
    changed = True
    while changed and len(order) > 2:
        changed = False
        m = len(order)
        for i in range(m):
            a, b = order[i], order[(i + 1) % m]
            delta = (ang[b] - ang[a]) % (2 * math.pi)
            if delta >= narrow:
                continue
            da = pts[a][0] ** 2 + pts[a][1] ** 2
            db = pts[b][0] ** 2 + pts[b][1] ** 2
            far, near = (a, b) if da >= db else (b, a)
            if mesh.edge_triangles(sid, far):
                far, near = near, far
                if mesh.edge_triangles(sid, far):
                    continue  # both protected by existing edges
            order.remove(far)
            changed = True
            break

    # label gaps; a gap is cleared (the fan closes over it) when the two
    # bounding neighbors already share a boundary edge of the mesh
    gap = math.radians(config.gap_angle)
    m = len(order)
    new_tris = []
    for i in range(m):
        a, b = order[i], order[(i + 1) % m]
        if m == 2 and i == 1:
            break  # only one fan wedge exists with two candidates
        delta = (ang[b] - ang[a]) % (2 * math.pi)
        if m == 2:
            delta2 = (ang[a] - ang[b]) % (2 * math.pi)
            if delta2 < delta:
                a, b, delta = b, a, delta2
        if delta > gap:
            if len(mesh.edge_triangles(a, b)) != 1:
                continue
        if delta <= 0.0 or delta >= math.pi:
            continue
        # keep edges at <= 2 incident triangles with opposite windings
        if any(
            mesh.edge_blocks_triangle(u, v)
            for u, v in ((sid, a), (a, b), (b, sid))
        ):
            continue
        tid = mesh.add_triangle(sid, a, b)
        if tid is not None:
            new_tris.append(tid)

    recompute_state(cloud, mesh, sid)
    for c in order:
        recompute_state(cloud, mesh, c)
    return True, new_tris


def run_meshing_iteration(cloud: SurfelCloud, tree, mesh: TriangleMesh,
                          queue, config: MeshingConfig = None):
    """Triangulate all queued surfels in ascending id order.

    Returns the ids whose triangulation was aborted (to retry next
    iteration).
    """
    config = config or MeshingConfig()
    carry = []
    for sid in sorted(set(queue)):
        if not cloud.alive[sid]:
            continue
        done, _ = triangulate_surfel(sid, cloud, tree, mesh, config)
        if not done:
            carry.append(sid)
    return carry
