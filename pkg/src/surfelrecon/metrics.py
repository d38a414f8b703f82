"""Mesh-quality and reconstruction-quality measurements.

Mesh quality works on raw (vertices, faces) arrays: fraction of
unreferenced vertices, boundary vertices, vertices with a manifold
(single consistently wound fan) neighborhood, average minimum triangle
angle, fraction of self-intersecting triangles, and the mean discrete
curvature. Coincident vertices are merged before evaluation.

Reconstruction quality compares surfel positions against an analytic
ground-truth surface: accuracy (reconstructed points near the surface)
and completeness (surface samples near the reconstruction).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .octree import CompressedOctree


@dataclass
class MeshQualityReport:
    n_vertices: int
    n_triangles: int
    free_pct: float
    boundary_pct: float
    manifold_pct: float
    self_intersect_pct: float
    avg_min_angle: float  # degrees
    mean_curvature: float  # units of 0.01/m

    def as_dict(self):
        return {
            "n_vertices": self.n_vertices,
            "n_triangles": self.n_triangles,
            "free_pct": self.free_pct,
            "boundary_pct": self.boundary_pct,
            "manifold_pct": self.manifold_pct,
            "self_intersect_pct": self.self_intersect_pct,
            "avg_min_angle": self.avg_min_angle,
            "mean_curvature": self.mean_curvature,
        }


@dataclass
class ReconEvalReport:
    tau: float
    accuracy_pct: float  # NaN when the reconstruction is empty
    completeness_pct: float
    curve: list = field(default_factory=list)  # (tau, acc, comp) sweep

    def as_dict(self):
        return {
            "tau": self.tau,
            "accuracy_pct": self.accuracy_pct,
            "completeness_pct": self.completeness_pct,
        }


def merge_vertices(V, F):
    """Collapse vertices with byte-identical positions; faces remapped."""
    V = np.asarray(V, dtype=np.float64).reshape(-1, 3)
    F = np.asarray(F, dtype=np.int64).reshape(-1, 3)
    if len(V) == 0:
        return V, F
    uniq, inverse = np.unique(V, axis=0, return_inverse=True)
    return uniq, inverse[F] if len(F) else F


def triangle_min_angles(V, F):
    """Minimum interior angle per face in degrees; degenerate faces 0."""
    if len(F) == 0:
        return np.zeros(0)
    P = V[F]
    out = np.full(len(F), np.pi)
    for k in range(3):
        a = P[:, k]
        u = P[:, (k + 1) % 3] - a
        v = P[:, (k + 2) % 3] - a
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        ok = (nu > 0) & (nv > 0)
        cosang = np.ones(len(F))
        cosang[ok] = np.einsum("ij,ij->i", u[ok], v[ok]) / (nu[ok] * nv[ok])
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        out = np.minimum(out, ang)
    areas = 0.5 * np.linalg.norm(
        np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1
    )
    out[areas == 0.0] = 0.0
    return np.degrees(out)


def _vertex_classes(nv, F):
    """Per-vertex flags (referenced, boundary, manifold)."""
    referenced = np.zeros(nv, dtype=bool)
    if len(F):
        referenced[F.reshape(-1)] = True
    edge_count = defaultdict(int)
    faces_of = defaultdict(list)
    for f in F:
        a, b, c = (int(f[0]), int(f[1]), int(f[2]))
        for u, v in ((a, b), (b, c), (c, a)):
            edge_count[(u, v) if u < v else (v, u)] += 1
        faces_of[a].append((a, b, c))
        faces_of[b].append((a, b, c))
        faces_of[c].append((a, b, c))

    boundary = np.zeros(nv, dtype=bool)
    for (u, v), cnt in edge_count.items():
        if cnt == 1:
            boundary[u] = True
            boundary[v] = True

    manifold = np.zeros(nv, dtype=bool)
    for v, faces in faces_of.items():
        # directed edges opposite v; a manifold fan is a single simple
        # directed path or cycle (consistent winding)
        nxt = {}
        indeg = defaultdict(int)
        ok = True
        for (a, b, c) in faces:
            if a == v:
                e = (b, c)
            elif b == v:
                e = (c, a)
            else:
                e = (a, b)
            if e[0] in nxt or e[0] == e[1]:
                ok = False
                break
            nxt[e[0]] = e[1]
            indeg[e[1]] += 1
            if indeg[e[1]] > 1:
                ok = False
                break
        if not ok:
            continue
        starts = [u for u in nxt if indeg[u] == 0]
        if len(starts) > 1:
            continue
        cur = starts[0] if starts else next(iter(nxt))
        steps = 0
        while cur in nxt and steps <= len(nxt):
            cur = nxt[cur]
            steps += 1
            if not starts and steps == len(nxt):
                break  # closed cycle
        manifold[v] = steps == len(nxt)
    return referenced, boundary, manifold


def _orient3d(a, b, c, d):
    return float(np.dot(np.cross(b - a, c - a), d - a))


def _tri_tri_intersect(t1, t2, eps=1e-12):
    """Proper intersection of two triangles given as (3,3) arrays;
    touching contacts below eps do not count."""
    n1 = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    n2 = np.cross(t2[1] - t2[0], t2[2] - t2[0])
    s1 = np.array([np.dot(n2, p - t2[0]) for p in t1])
    s2 = np.array([np.dot(n1, p - t1[0]) for p in t2])
    tol1 = eps * max(np.linalg.norm(n2) * max(1.0, np.abs(t1).max()), 1e-300)
    tol2 = eps * max(np.linalg.norm(n1) * max(1.0, np.abs(t2).max()), 1e-300)
    s1 = np.where(np.abs(s1) <= tol1, 0.0, s1)
    s2 = np.where(np.abs(s2) <= tol2, 0.0, s2)
    if np.all(s1 == 0.0):
        return _coplanar_overlap(t1, t2, n2, eps)
    if np.all(s1 >= 0.0) or np.all(s1 <= 0.0):
        return False
    if np.all(s2 >= 0.0) or np.all(s2 <= 0.0):
        return False

    def edge_crosses(a, b, tri):
        da = _orient3d(tri[0], tri[1], tri[2], a)
        db = _orient3d(tri[0], tri[1], tri[2], b)
        if da * db >= 0:
            return False
        v1 = _orient3d(a, b, tri[0], tri[1])
        v2 = _orient3d(a, b, tri[1], tri[2])
        v3 = _orient3d(a, b, tri[2], tri[0])
        return (v1 > 0 and v2 > 0 and v3 > 0) or (v1 < 0 and v2 < 0 and v3 < 0)

    for i in range(3):
        if edge_crosses(t1[i], t1[(i + 1) % 3], t2):
            return True
        if edge_crosses(t2[i], t2[(i + 1) % 3], t1):
            return True
    return False


def _coplanar_overlap(t1, t2, n, eps):
    ax = int(np.argmax(np.abs(n)))
    keep = [k for k in range(3) if k != ax]
    a2 = t1[:, keep]
    b2 = t2[:, keep]

    def seg_cross(p1, p2, p3, p4):
        def cr(o, a, b):
            return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

        d1, d2 = cr(p3, p4, p1), cr(p3, p4, p2)
        d3, d4 = cr(p1, p2, p3), cr(p1, p2, p4)
        return ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
            (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
        )

    for i in range(3):
        for j in range(3):
            if seg_cross(a2[i], a2[(i + 1) % 3], b2[j], b2[(j + 1) % 3]):
                return True

    def inside(p, tri):
        sgn = 0
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            c = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if abs(c) <= eps:
                return False
            s = 1 if c > 0 else -1
            if sgn == 0:
                sgn = s
            elif s != sgn:
                return False
        return True

    return any(inside(p, b2) for p in a2) or any(inside(p, a2) for p in b2)


def self_intersecting_fraction(V, F):
    """Fraction of triangles properly intersecting another triangle,
    excluding pairs that share a vertex."""
    m = len(F)
    if m < 2:
        return 0.0
    P = V[F]
    lo = P.min(axis=1)
    hi = P.max(axis=1)
    ext = hi - lo
    cell = max(float(np.median(ext.max(axis=1))), 1e-9)
    grid = defaultdict(list)
    lo_i = np.floor(lo / cell).astype(np.int64)
    hi_i = np.floor(hi / cell).astype(np.int64)
    for t in range(m):
        for gx in range(lo_i[t, 0], hi_i[t, 0] + 1):
            for gy in range(lo_i[t, 1], hi_i[t, 1] + 1):
                for gz in range(lo_i[t, 2], hi_i[t, 2] + 1):
                    grid[(gx, gy, gz)].append(t)
    pairs = set()
    for bucket in grid.values():
        for i in range(len(bucket)):
            for j in range(i + 1, len(bucket)):
                pairs.add((bucket[i], bucket[j]))
    bad = np.zeros(m, dtype=bool)
    fset = [set(map(int, f)) for f in F]
    for i, j in pairs:
        if bad[i] and bad[j]:
            continue
        if fset[i] & fset[j]:
            continue
        if np.any(lo[i] > hi[j]) or np.any(lo[j] > hi[i]):
            continue
        if _tri_tri_intersect(P[i], P[j]):
            bad[i] = True
            bad[j] = True
    return float(bad.sum()) / m


def mean_curvature(V, F, boundary, manifold):
    """Mean discrete curvature magnitude over interior manifold vertices
    (cotangent Laplacian with mixed Voronoi areas), in units of 0.01/m."""
    nv = len(V)
    if len(F) == 0:
        return 0.0
    lap = np.zeros((nv, 3))
    area = np.zeros(nv)
    P = V[F]
    for k in range(3):
        i, j, o = F[:, k], F[:, (k + 1) % 3], F[:, (k + 2) % 3]
        u = P[:, k] - P[:, (k + 2) % 3]
        v = P[:, (k + 1) % 3] - P[:, (k + 2) % 3]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        cot = np.einsum("ij,ij->i", u, v) / np.maximum(cross, 1e-300)
        w = cot[:, None] * (V[j] - V[i])
        np.add.at(lap, i, w)
        np.add.at(lap, j, -w)
    # mixed Voronoi areas
    e = [P[:, (k + 1) % 3] - P[:, k] for k in range(3)]
    tri_area = 0.5 * np.linalg.norm(np.cross(e[0], -e[2]), axis=1)
    cots = []
    for k in range(3):
        u = -e[(k + 2) % 3]
        v = e[k]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        cots.append(np.einsum("ij,ij->i", u, v) / np.maximum(cross, 1e-300))
    cots = np.stack(cots, axis=1)  # angle at vertex k
    obtuse = cots < 0
    any_obtuse = obtuse.any(axis=1)
    for k in range(3):
        i = F[:, k]
        l2a = np.einsum("ij,ij->i", e[k], e[k])  # edge k -> k+1
        l2b = np.einsum("ij,ij->i", e[(k + 2) % 3], e[(k + 2) % 3])
        voronoi = 0.125 * (l2a * cots[:, (k + 2) % 3] + l2b * cots[:, (k + 1) % 3])
        mixed = np.where(
            any_obtuse,
            np.where(obtuse[:, k], tri_area / 2.0, tri_area / 4.0),
            voronoi,
        )
        np.add.at(area, i, mixed)
    sel = manifold & ~boundary & (area > 1e-300)
    if not np.any(sel):
        return 0.0
    H = np.linalg.norm(lap[sel], axis=1) / (4.0 * area[sel])
    return float(np.mean(H)) * 100.0


def mesh_quality(V, F, skip_intersections=False) -> MeshQualityReport:
    V, F = merge_vertices(V, F)
    nv = len(V)
    if nv == 0:
        return MeshQualityReport(0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    referenced, boundary, manifold = _vertex_classes(nv, F)
    angles = triangle_min_angles(V, F)
    isect = 0.0 if skip_intersections else self_intersecting_fraction(V, F)
    return MeshQualityReport(
        n_vertices=nv,
        n_triangles=len(F),
        free_pct=100.0 * float((~referenced).sum()) / nv,
        boundary_pct=100.0 * float((referenced & boundary).sum()) / nv,
        manifold_pct=100.0 * float(manifold.sum()) / nv,
        self_intersect_pct=100.0 * isect,
        avg_min_angle=float(np.mean(angles)) if len(angles) else 0.0,
        mean_curvature=mean_curvature(V, F, boundary, manifold),
    )


def accuracy_completeness(recon_points, gt_samples, distance_fn, tau,
                          sweep_taus=None) -> ReconEvalReport:
    """Accuracy: % of reconstructed points within tau of the surface
    (analytic distance). Completeness: % of surface samples within tau
    of the nearest reconstructed point."""
    recon_points = np.asarray(recon_points, dtype=np.float64).reshape(-1, 3)
    gt_samples = np.asarray(gt_samples, dtype=np.float64).reshape(-1, 3)
    taus = sorted(set([float(tau)] + [float(t) for t in (sweep_taus or [])]))
    tau_max = max(taus)

    if len(recon_points) == 0:
        report = ReconEvalReport(float(tau), float("nan"), 0.0)
        report.curve = [(t, float("nan"), 0.0) for t in taus]
        return report

    dist_rec = np.abs(np.asarray(distance_fn(recon_points), dtype=np.float64))

    tree = CompressedOctree()
    for i, p in enumerate(recon_points):
        tree.insert(i, p)
    dist_gt = np.full(len(gt_samples), np.inf)
    for i, q in enumerate(gt_samples):
        found = tree.radius_search(q, tau_max)
        if found:
            dist_gt[i] = min(d for _, d in found)

    def at(t):
        acc = 100.0 * float(np.mean(dist_rec <= t))
        comp = (
            100.0 * float(np.mean(dist_gt <= t)) if len(dist_gt) else 0.0
        )
        return acc, comp

    acc, comp = at(float(tau))
    report = ReconEvalReport(float(tau), acc, comp)
    report.curve = [(t,) + at(t) for t in taus]
    return report
