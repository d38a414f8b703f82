"""Compressed octree over surfel positions with lazy movement handling.

Nodes hold axis-aligned cubes from the canonical octant hierarchy of the
root cube. Compression works by level skipping: a child may be any
aligned descendant cube of its parent's octant, so interior nodes never
have a single child without residents (the root may shrink or grow to
keep this true globally).

Moves are lazy: notify_moved only re-parks a surfel at the lowest
ancestor containing its new position. Parked surfels are pushed down one
level at a time while a radius search traverses their node, creating new
nodes as needed; propagation stops at leaves and at nodes the search
does not traverse.
"""

from __future__ import annotations

import math


class _Node:
    __slots__ = ("cx", "cy", "cz", "half", "children", "residents", "parent")

    def __init__(self, cx, cy, cz, half, parent=None):
        self.cx = cx
        self.cy = cy
        self.cz = cz
        self.half = half
        self.children = {}  # octant index -> _Node
        self.residents = {}  # surfel id -> (x, y, z)
        self.parent = parent

    def contains(self, p):
        # half-open cube [c - h, c + h)
        h = self.half
        return (
            self.cx - h <= p[0] < self.cx + h
            and self.cy - h <= p[1] < self.cy + h
            and self.cz - h <= p[2] < self.cz + h
        )

    def octant_of(self, p):
        return (
            (4 if p[0] >= self.cx else 0)
            | (2 if p[1] >= self.cy else 0)
            | (1 if p[2] >= self.cz else 0)
        )

    def octant_cube(self, o):
        q = self.half / 2.0
        return (
            self.cx + (q if o & 4 else -q),
            self.cy + (q if o & 2 else -q),
            self.cz + (q if o & 1 else -q),
            q,
        )

    def intersects_ball(self, q, r2):
        dx = max(abs(q[0] - self.cx) - self.half, 0.0)
        dy = max(abs(q[1] - self.cy) - self.half, 0.0)
        dz = max(abs(q[2] - self.cz) - self.half, 0.0)
        return dx * dx + dy * dy + dz * dz <= r2


def _cube_contains(cx, cy, cz, h, p):
    return (
        cx - h <= p[0] < cx + h
        and cy - h <= p[1] < cy + h
        and cz - h <= p[2] < cz + h
    )


def _cube_contains_cube(cx, cy, cz, h, node):
    eps = h * 1e-12
    return (
        node.half <= h + eps
        and abs(node.cx - cx) <= h - node.half + eps
        and abs(node.cy - cy) <= h - node.half + eps
        and abs(node.cz - cz) <= h - node.half + eps
    )


class CompressedOctree:
    def __init__(self, leaf_capacity=16, initial_half=0.5, max_levels=40):
        self.leaf_capacity = leaf_capacity
        self.initial_half = initial_half
        self.max_levels = max_levels
        self.root = None
        self.node_of = {}  # surfel id -> node currently holding it
        self._min_half = None

    def __len__(self):
        return len(self.node_of)

    def __contains__(self, sid):
        return sid in self.node_of

    # -- structure helpers -------------------------------------------------

    def _grow_root(self, p):
        """Double the root cube outward toward p until it contains p."""
        r = self.root
        cx, cy, cz, h = r.cx, r.cy, r.cz, r.half
        while not _cube_contains(cx, cy, cz, h, p):
            cx += h if p[0] >= cx else -h
            cy += h if p[1] >= cy else -h
            cz += h if p[2] >= cz else -h
            h *= 2.0
        if h == r.half:
            return
        new_root = _Node(cx, cy, cz, h)
        o = new_root.octant_of((r.cx, r.cy, r.cz))
        new_root.children[o] = r
        r.parent = new_root
        self.root = new_root

    def _attach_between(self, parent, slot, child, p):
        """p lies in parent's octant `slot`, which is occupied by a
        level-skipped child not containing p. Insert the smallest aligned
        cube separating them and return the node from which to continue."""
        cx, cy, cz, h = parent.octant_cube(slot)
        # descend while the octant holding p still contains the child cube
        while True:
            o = (
                (4 if p[0] >= cx else 0)
                | (2 if p[1] >= cy else 0)
                | (1 if p[2] >= cz else 0)
            )
            q = h / 2.0
            ncx = cx + (q if o & 4 else -q)
            ncy = cy + (q if o & 2 else -q)
            ncz = cz + (q if o & 1 else -q)
            if not _cube_contains_cube(ncx, ncy, ncz, q, child):
                break
            cx, cy, cz, h = ncx, ncy, ncz, q
        mid = _Node(cx, cy, cz, h, parent)
        parent.children[slot] = mid
        co = mid.octant_of((child.cx, child.cy, child.cz))
        mid.children[co] = child
        child.parent = mid
        return mid

    def _descend_step(self, node, p):
        """One step of placement from an interior node toward p.
        Returns the child node now responsible for p (created if needed)."""
        o = node.octant_of(p)
        child = node.children.get(o)
        if child is None:
            cx, cy, cz, q = node.octant_cube(o)
            child = _Node(cx, cy, cz, q, node)
            node.children[o] = child
            return child
        if child.contains(p):
            return child
        return self._attach_between(node, o, child, p)

    def _split(self, leaf):
        if len(leaf.residents) <= self.leaf_capacity:
            return
        if leaf.half <= self._min_half:
            return  # depth guard: co-located points share the leaf
        items = list(leaf.residents.items())
        octs = {leaf.octant_of(pos) for _, pos in items}
        if len(octs) == 1:
            # all residents in one octant: shrink to the smallest aligned
            # cube around them and splice the old node out (compression)
            cx, cy, cz, h = leaf.cx, leaf.cy, leaf.cz, leaf.half
            while h > self._min_half:
                q = h / 2.0
                first = items[0][1]
                o = (
                    (4 if first[0] >= cx else 0)
                    | (2 if first[1] >= cy else 0)
                    | (1 if first[2] >= cz else 0)
                )
                ncx = cx + (q if o & 4 else -q)
                ncy = cy + (q if o & 2 else -q)
                ncz = cz + (q if o & 1 else -q)
                if not all(
                    _cube_contains(ncx, ncy, ncz, q, pos) for _, pos in items
                ):
                    break
                cx, cy, cz, h = ncx, ncy, ncz, q
            if h == leaf.half:
                return  # cannot shrink further
            small = _Node(cx, cy, cz, h, leaf.parent)
            small.residents = leaf.residents
            leaf.residents = {}
            for sid in small.residents:
                self.node_of[sid] = small
            if leaf.parent is None:
                small.parent = None
                self.root = small
            else:
                for slot, ch in leaf.parent.children.items():
                    if ch is leaf:
                        leaf.parent.children[slot] = small
                        break
            self._split(small)
            return
        for sid, pos in items:
            o = leaf.octant_of(pos)
            child = leaf.children.get(o)
            if child is None:
                cx, cy, cz, q = leaf.octant_cube(o)
                child = _Node(cx, cy, cz, q, leaf)
                leaf.children[o] = child
            child.residents[sid] = pos
            self.node_of[sid] = child
        leaf.residents = {}
        for child in list(leaf.children.values()):
            self._split(child)

    def _cleanup(self, node):
        """Restore compression upward from a node that lost residents."""
        while node is not None:
            parent = node.parent
            if not node.residents and not node.children:
                if parent is None:
                    self.root = None
                else:
                    for slot, ch in list(parent.children.items()):
                        if ch is node:
                            del parent.children[slot]
                            break
                node = parent
                continue
            if not node.residents and len(node.children) == 1:
                (only,) = node.children.values()
                if parent is None:
                    only.parent = None
                    self.root = only
                else:
                    for slot, ch in parent.children.items():
                        if ch is node:
                            parent.children[slot] = only
                            only.parent = parent
                            break
                node = parent
                continue
            return

    # -- public operations -------------------------------------------------

    def insert(self, sid, position):
        if sid in self.node_of:
            raise KeyError(f"surfel {sid} already in tree")
        p = (float(position[0]), float(position[1]), float(position[2]))
        if self.root is None:
            self.root = _Node(p[0], p[1], p[2], self.initial_half)
            self._min_half = self.initial_half * 2.0**-self.max_levels
        elif not self.root.contains(p):
            self._grow_root(p)
        node = self.root
        while node.children:
            node = self._descend_step(node, p)
        node.residents[sid] = p
        self.node_of[sid] = node
        self._split(node)

    def remove(self, sid):
        node = self.node_of.pop(sid, None)
        if node is None:
            raise KeyError(f"surfel {sid} not in tree")
        del node.residents[sid]
        self._cleanup(node)

    def notify_moved(self, sid, new_position):
        node = self.node_of.get(sid)
        if node is None:
            raise KeyError(f"surfel {sid} not in tree")
        p = (float(new_position[0]), float(new_position[1]), float(new_position[2]))
        if node.contains(p):
            node.residents[sid] = p
            return
        del node.residents[sid]
        anc = node.parent
        while anc is not None and not anc.contains(p):
            anc = anc.parent
        if anc is None:
            self._grow_root(p)
            anc = self.root
        anc.residents[sid] = p
        self.node_of[sid] = anc
        if node is not anc:
            self._cleanup(node)

    def radius_search(self, center, radius):
        """All (id, distance) with |p - center| <= radius, pushing parked
        surfels down through traversed nodes as a side effect."""
        if self.root is None:
            return []
        q = (float(center[0]), float(center[1]), float(center[2]))
        r2 = float(radius) * float(radius)
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.intersects_ball(q, r2):
                continue
            if node.children:
                # lazy push-down of parked surfels into traversed octants
                for sid, pos in list(node.residents.items()):
                    o = node.octant_of(pos)
                    ocx, ocy, ocz, oh = node.octant_cube(o)
                    dx = max(abs(q[0] - ocx) - oh, 0.0)
                    dy = max(abs(q[1] - ocy) - oh, 0.0)
                    dz = max(abs(q[2] - ocz) - oh, 0.0)
                    if dx * dx + dy * dy + dz * dz > r2:
                        continue  # octant not traversed; surfel stays
                    child = self._descend_step(node, pos)
                    del node.residents[sid]
                    child.residents[sid] = pos
                    self.node_of[sid] = child
                for child in node.children.values():
                    stack.append(child)
            for sid, pos in node.residents.items():
                dx = pos[0] - q[0]
                dy = pos[1] - q[1]
                dz = pos[2] - q[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= r2:
                    out.append((sid, math.sqrt(d2)))
        out.sort()
        return out

    # -- introspection (used by the test suite) ----------------------------

    def check_invariants(self):
        """Walk the tree verifying containment and compression."""
        if self.root is None:
            assert not self.node_of
            return
        seen = {}
        stack = [self.root]
        while stack:
            node = stack.pop()
            for sid, pos in node.residents.items():
                assert node.contains(pos), f"resident {sid} outside its cube"
                assert sid not in seen, f"resident {sid} in two nodes"
                seen[sid] = node
                assert self.node_of[sid] is node
                if node.children:
                    # interior residency only via lazy moves; nothing to
                    # check beyond containment here
                    pass
            if node.children:
                assert node.residents or len(node.children) >= 2, (
                    "interior node with a single child and no residents"
                )
            for slot, child in node.children.items():
                assert child.parent is node
                cx, cy, cz, q2 = node.octant_cube(slot)
                assert _cube_contains_cube(cx, cy, cz, q2, child), (
                    "child cube not inside its parent octant"
                )
                stack.append(child)
        assert set(seen) == set(self.node_of)
