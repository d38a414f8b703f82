"""Incremental triangle mesh whose vertices are surfel slots.

Triangles are stored under stable integer IDs so deletions are O(1);
incidence maps each surfel to the set of triangle IDs touching it.
Duplicate triangles (same unordered vertex set) are rejected.
"""

from __future__ import annotations

from collections import defaultdict


class TriangleMesh:
    def __init__(self):
        self.triangles = {}  # tid -> (a, b, c) counterclockwise wrt surfel normals
        self.incidence = defaultdict(set)  # surfel id -> set of tids
        self._keys = {}  # frozenset vertex key -> tid
        self._next_tid = 0

    def __len__(self):
        return len(self.triangles)

    def has_triangle(self, a, b, c):
        return frozenset((a, b, c)) in self._keys

    def add_triangle(self, a, b, c):
        """Add a CCW triangle; returns its tid, or None if a duplicate."""
        if a == b or b == c or a == c:
            raise ValueError("degenerate triangle indices")
        key = frozenset((a, b, c))
        if key in self._keys:
            return None
        tid = self._next_tid
        self._next_tid += 1
        self.triangles[tid] = (a, b, c)
        self._keys[key] = tid
        for v in (a, b, c):
            self.incidence[v].add(tid)
        return tid

    def remove_triangle(self, tid):
        a, b, c = self.triangles.pop(tid)
        del self._keys[frozenset((a, b, c))]
        for v in (a, b, c):
            s = self.incidence[v]
            s.discard(tid)
            if not s:
                del self.incidence[v]

    def remove_triangles_of(self, sid):
        """Delete every triangle incident to a surfel; returns deleted tids."""
        tids = list(self.incidence.get(sid, ()))
        for tid in tids:
            self.remove_triangle(tid)
        return tids

    def triangles_of(self, sid):
        return self.incidence.get(sid, frozenset())

    def vertex_ring(self, sid):
        """Map neighbor vertex -> number of sid's incident triangles using it."""
        counts = defaultdict(int)
        for tid in self.incidence.get(sid, ()):
            for v in self.triangles[tid]:
                if v != sid:
                    counts[v] += 1
        return counts

    def edge_triangles(self, a, b):
        """Triangle IDs sharing edge (a, b)."""
        ta = self.incidence.get(a)
        tb = self.incidence.get(b)
        if not ta or not tb:
            return set()
        return ta & tb

    def edge_blocks_triangle(self, u, v):
        """True if adding a CCW triangle with directed edge u -> v would
        break local manifoldness: the undirected edge already carries two
        triangles, or one of them already traverses u -> v (same winding)."""
        tids = self.edge_triangles(u, v)
        if len(tids) >= 2:
            return True
        for tid in tids:
            t = self.triangles[tid]
            for k in range(3):
                if t[k] == u and t[(k + 1) % 3] == v:
                    return True
        return False

    def triangle_array(self):
        """Triangles as an (M, 3) int array in deterministic tid order."""
        import numpy as np

        if not self.triangles:
            return np.zeros((0, 3), dtype=np.int64)
        tids = sorted(self.triangles)
        return np.array([self.triangles[t] for t in tids], dtype=np.int64)
