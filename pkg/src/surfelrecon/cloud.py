"""Surfel storage.

Surfels live in a structure-of-arrays store with stable slot indices.
Deleting a surfel pushes its slot onto a free heap; replacement reuses the
slot, so mesh vertex arrays indexed by surfel ID never need remapping.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

# triangulation states
TRI_FREE = 0
TRI_FRONT = 1
TRI_COMPLETED = 2

SIGMA_MAX_DEFAULT = 5.0


@dataclass
class Surfel:
    """Value view of one surfel (copy of the cloud's arrays)."""

    p: np.ndarray
    p_bar: np.ndarray
    n: np.ndarray
    c: np.ndarray
    sigma: float
    r: float
    t0: int
    t: int
    neighbors: np.ndarray  # up to 4 ids, -1 padded
    tri_state: int = TRI_FREE
    grad_accum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))


class SurfelCloud:
    def __init__(self, capacity=1024):
        self._grow_to(capacity, init=True)
        self.size = 0  # slots ever touched (dense prefix)
        self.free_heap = []
        # change tracking since the last meshing snapshot
        self.moved_since_mesh = set()
        self.replaced_since_mesh = set()
        self.created_since_mesh = set()
        self.freed_since_mesh = set()

    def _grow_to(self, capacity, init=False):
        def grow(old, shape, dtype, fill):
            a = np.full(shape, fill, dtype=dtype)
            if old is not None:
                a[: len(old)] = old
            return a

        def take(name):
            return None if init else getattr(self, name)

        self.p = grow(take("p"), (capacity, 3), np.float64, 0.0)
        self.p_bar = grow(take("p_bar"), (capacity, 3), np.float64, 0.0)
        self.n = grow(take("n"), (capacity, 3), np.float64, 0.0)
        self.c = grow(take("c"), (capacity, 3), np.float64, 0.0)
        self.sigma = grow(take("sigma"), (capacity,), np.float64, 0.0)
        self.r = grow(take("r"), (capacity,), np.float64, 0.0)
        self.t0 = grow(take("t0"), (capacity,), np.int64, 0)
        self.t = grow(take("t"), (capacity,), np.int64, 0)
        self.neighbors = grow(take("neighbors"), (capacity, 4), np.int64, -1)
        self.tri_state = grow(take("tri_state"), (capacity,), np.int8, TRI_FREE)
        self.alive = grow(take("alive"), (capacity,), bool, False)
        self.grad_accum = grow(take("grad_accum"), (capacity, 3), np.float64, 0.0)
        self.delta_p = grow(take("delta_p"), (capacity, 3), np.float64, 0.0)
        self.capacity = capacity

    def __len__(self):
        return int(np.count_nonzero(self.alive[: self.size]))

    def live_ids(self):
        """Live surfel IDs in ascending slot order (deterministic)."""
        return np.flatnonzero(self.alive[: self.size])

    def _alloc(self, count):
        ids = np.empty(count, dtype=np.int64)
        n_reused = min(count, len(self.free_heap))
        for i in range(n_reused):
            ids[i] = heapq.heappop(self.free_heap)
        n_fresh = count - n_reused
        if self.size + n_fresh > self.capacity:
            cap = self.capacity
            while self.size + n_fresh > cap:
                cap *= 2
            self._grow_to(cap)
        ids[n_reused:] = np.arange(self.size, self.size + n_fresh)
        self.size += n_fresh
        return ids

    def create_many(self, p, n, c, r, t):
        """Append surfels; returns their slot IDs. sigma starts at 1."""
        p = np.atleast_2d(p)
        count = len(p)
        ids = self._alloc(count)
        self.p[ids] = p
        self.p_bar[ids] = p
        self.n[ids] = np.atleast_2d(n)
        self.c[ids] = np.atleast_2d(c)
        self.sigma[ids] = 1.0
        self.r[ids] = r
        self.t0[ids] = t
        self.t[ids] = t
        self.neighbors[ids] = -1
        self.tri_state[ids] = TRI_FREE
        self.alive[ids] = True
        self.grad_accum[ids] = 0.0
        self.delta_p[ids] = 0.0
        self.created_since_mesh.update(int(i) for i in ids)
        return ids

    def create(self, p, n, c, r, t):
        return int(self.create_many(p, n, c, r, t)[0])

    def free(self, sid):
        if not self.alive[sid]:
            raise KeyError(f"surfel {sid} is not live")
        self.alive[sid] = False
        heapq.heappush(self.free_heap, int(sid))
        self.freed_since_mesh.add(int(sid))
        self.created_since_mesh.discard(int(sid))
        self.moved_since_mesh.discard(int(sid))

    def get(self, sid) -> Surfel:
        if not self.alive[sid]:
            raise KeyError(f"surfel {sid} is not live")
        return Surfel(
            p=self.p[sid].copy(),
            p_bar=self.p_bar[sid].copy(),
            n=self.n[sid].copy(),
            c=self.c[sid].copy(),
            sigma=float(self.sigma[sid]),
            r=float(self.r[sid]),
            t0=int(self.t0[sid]),
            t=int(self.t[sid]),
            neighbors=self.neighbors[sid].copy(),
            tri_state=int(self.tri_state[sid]),
            grad_accum=self.grad_accum[sid].copy(),
            delta_p=self.delta_p[sid].copy(),
        )

    def clear_mesh_trackers(self):
        """Drain the change sets accumulated for the next meshing snapshot."""
        out = (
            self.moved_since_mesh,
            self.replaced_since_mesh,
            self.created_since_mesh,
            self.freed_since_mesh,
        )
        self.moved_since_mesh = set()
        self.replaced_since_mesh = set()
        self.created_since_mesh = set()
        self.freed_since_mesh = set()
        return out
