"""Per-frame reconstruction loop and (re)meshing orchestration.

Integration runs per frame: preprocess -> associate -> boundary blend ->
integrate -> merge -> neighbor update -> denoise step -> deformation
events. Meshing consumes the accumulated change trackers: it syncs the
octree, runs a remeshing pass, then a meshing iteration.

Two modes: lockstep (one remesh+mesh iteration synchronously after every
frame; deterministic reference) and async (meshing on a background
thread over cloud snapshots, picking up new work whenever it is idle).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .association import CONFLICTING, SUPPORTED, AssocConfig, associate
from .blend import blend_boundaries
from .camera import CameraIntrinsics
from .cloud import TRI_COMPLETED, SurfelCloud
from .denoise import (DenoiseConfig, apply_deformation, denoise_iteration,
                      update_neighbors)
from .fusion import FusionConfig, integrate_frame, merge_similar
from .mesh import TriangleMesh
from .mesher import MeshingConfig, build_queue, run_meshing_iteration
from .octree import CompressedOctree
from .preprocess import PreprocessConfig, Preprocessor
from .remesher import RemeshConfig, defer_inactive, remesh_pass


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    meshing: MeshingConfig = field(default_factory=MeshingConfig)
    remesh: RemeshConfig = field(default_factory=RemeshConfig)
    meshing_mode: str = "lockstep"  # or "async"
    enable_blend: bool = True
    blend_i_count: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.meshing_mode not in ("lockstep", "async"):
            raise ValueError("meshing_mode must be lockstep or async")


class _CloudSnapshot:
    """Frozen copy of the cloud fields the meshing side reads, plus a
    shared tri_state buffer that is written back after the iteration."""

    def __init__(self, cloud: SurfelCloud):
        n = cloud.size
        self.size = n
        self.alive = cloud.alive[:n].copy()
        self.p_bar = cloud.p_bar[:n].copy()
        self.n = cloud.n[:n].copy()
        self.r = cloud.r[:n].copy()
        self.t = cloud.t[:n].copy()
        self.t0 = cloud.t0[:n].copy()
        self.tri_state = cloud.tri_state[:n].copy()

    def live_ids(self):
        return np.flatnonzero(self.alive)


class Pipeline:
    def __init__(self, config: PipelineConfig = None,
                 intrinsics: CameraIntrinsics = None):
        self.config = config or PipelineConfig()
        self.intrinsics = intrinsics
        self.cloud = SurfelCloud()
        self.tree = CompressedOctree()
        self.mesh = TriangleMesh()
        self.preprocessor = None
        self.deferred = set()
        self.carry = []
        self.frame_count = 0
        self.last_t = -1
        self.timings = []
        self.deletion_fractions = []
        self.deform_events = []  # (frame index, offsets dict), sorted
        self._lock = threading.Lock()
        self._done = False

    # -- integration side --------------------------------------------------

    def process_frame(self, frame):
        """One fully preprocessed DepthFrame through fusion + denoising."""
        cfg = self.config
        t0 = time.perf_counter()
        with self._lock:
            assoc = associate(self.cloud, frame, cfg.assoc, seed=cfg.seed)
            t1 = time.perf_counter()
            if self.deferred:
                for sid in [s for s in self.deferred
                            if assoc.cls.get(s) in (SUPPORTED, CONFLICTING)]:
                    self.deferred.discard(sid)
                    self.cloud.moved_since_mesh.add(sid)

            depth = np.where(frame.valid, frame.depth, 0.0)
            if cfg.enable_blend:
                depth = blend_boundaries(
                    depth, assoc.surfel_depth_image, cfg.blend_i_count
                )
            t2 = time.perf_counter()
            integrate_frame(self.cloud, frame, assoc, cfg.fusion,
                            depth_blended=depth)
            merge_similar(self.cloud, assoc, cfg.fusion)
            t3 = time.perf_counter()
            update_neighbors(self.cloud, assoc, cfg.denoise)
            denoise_iteration(self.cloud, frame.t, cfg.denoise)
            t4 = time.perf_counter()
            while self.deform_events and self.deform_events[0][0] <= frame.t:
                _, offsets = self.deform_events.pop(0)
                # surfels may have died since the event was authored
                offsets = {
                    sid: off
                    for sid, off in offsets.items()
                    if 0 <= sid < self.cloud.size and self.cloud.alive[sid]
                }
                apply_deformation(self.cloud, offsets, cfg.denoise)
            self.last_t = frame.t
            self.frame_count += 1
        self.timings.append(
            {
                "frame": frame.t,
                "associate": t1 - t0,
                "blend": t2 - t1,
                "integrate": t3 - t2,
                "denoise": t4 - t3,
            }
        )

    # -- meshing side ------------------------------------------------------

    def _sync_octree(self, created, freed, moved, snapshot):
        for sid in sorted(created):
            if snapshot.alive[sid] and sid not in self.tree:
                self.tree.insert(sid, snapshot.p_bar[sid])
        for sid in sorted(freed):
            if sid in self.tree:
                self.tree.remove(sid)
        for sid in sorted(moved):
            if snapshot.alive[sid] and sid in self.tree:
                self.tree.notify_moved(sid, snapshot.p_bar[sid])

    def mesh_iteration(self):
        """One remesh + mesh iteration over the pending changes."""
        cfg = self.config
        with self._lock:
            moved, replaced, created, freed = self.cloud.clear_mesh_trackers()
            snapshot = _CloudSnapshot(self.cloud)
            now = self.last_t
        t0 = time.perf_counter()

        moved = (moved | replaced) - created
        self._sync_octree(created, freed, moved, snapshot)
        check_now, later = defer_inactive(
            snapshot, moved - replaced, now, cfg.assoc.active_window
        )
        with self._lock:
            self.deferred.update(later)

        tris_before = len(self.mesh.triangles)
        deleted, scheduled = remesh_pass(
            snapshot, self.tree, self.mesh,
            check_now, sorted(replaced), sorted(created), cfg.remesh,
            freed=freed,
        )
        t1 = time.perf_counter()
        queue = build_queue(
            snapshot, sorted(created), sorted(replaced), sorted(check_now),
            scheduled | set(self.carry),
        )
        self.carry = run_meshing_iteration(
            snapshot, self.tree, self.mesh, queue, cfg.meshing
        )
        t2 = time.perf_counter()

        with self._lock:
            # publish new triangulation states for surfels that were not
            # replaced or freed in the meantime
            ok = (
                self.cloud.alive[: snapshot.size]
                & snapshot.alive
                & (self.cloud.t0[: snapshot.size] == snapshot.t0)
            )
            self.cloud.tri_state[: snapshot.size][ok] = snapshot.tri_state[ok]
        self.deletion_fractions.append(deleted / max(tris_before, 1))
        self.timings.append(
            {"frame": now, "remesh": t1 - t0, "mesh": t2 - t1,
             "deleted": deleted}
        )
        return deleted

    def _has_mesh_work(self):
        c = self.cloud
        return bool(
            c.moved_since_mesh or c.replaced_since_mesh
            or c.created_since_mesh or c.freed_since_mesh or self.carry
        )

    def _drain_mesh(self):
        """Finish meshing at end of stream: give every open-fan surfel a
        last triangulation attempt, then iterate until the backlog
        settles. Surfels that keep aborting (carried with no progress)
        end the drain."""
        with self._lock:
            ids = self.cloud.live_ids()
            open_fans = ids[self.cloud.tri_state[ids] != TRI_COMPLETED]
            self.carry = sorted(set(self.carry) | set(int(i) for i in open_fans))
        prev = None
        while self._has_mesh_work():
            self.mesh_iteration()
            state = (self.mesh._next_tid, len(self.mesh), tuple(self.carry))
            if state == prev:
                break
            prev = state

    # -- drivers -----------------------------------------------------------

    def add_deform_events(self, events):
        self.deform_events.extend(
            (int(f), dict(off)) for f, off in events
        )
        self.deform_events.sort(key=lambda e: e[0])

    def run(self, raw_frames):
        """Drive the pipeline over an iterable of (depth, color, pose).

        Frames are indexed by position; preprocessing buffers a few
        frames for the temporal filter, so output lags input slightly.
        """
        cfg = self.config
        if self.intrinsics is None:
            raise ValueError("pipeline needs camera intrinsics")
        self.preprocessor = Preprocessor(self.intrinsics, cfg.preprocess)

        idx = 0
        if cfg.meshing_mode == "lockstep":
            for depth, color, pose in raw_frames:
                for frame in self.preprocessor.push(depth, color, pose, idx):
                    self.process_frame(frame)
                    self.mesh_iteration()
                idx += 1
            for frame in self.preprocessor.flush():
                self.process_frame(frame)
                self.mesh_iteration()
            self._drain_mesh()
            return

        self._done = False
        worker = threading.Thread(target=self._mesh_worker, daemon=True)
        worker.start()
        try:
            for depth, color, pose in raw_frames:
                for frame in self.preprocessor.push(depth, color, pose, idx):
                    self.process_frame(frame)
                idx += 1
            for frame in self.preprocessor.flush():
                self.process_frame(frame)
        finally:
            self._done = True
            worker.join()

    def _mesh_worker(self):
        while True:
            if self._done:
                self._drain_mesh()
                return
            if self._has_mesh_work():
                self.mesh_iteration()
            else:
                time.sleep(0.001)

    # -- output ------------------------------------------------------------

    def export_mesh(self, strip_free=False):
        """(vertices, colors, faces) arrays of the current mesh. Free
        surfels are kept as unreferenced vertices unless strip_free."""
        with self._lock:
            ids = self.cloud.live_ids()
            faces_raw = [
                tri for tri in
                (self.mesh.triangles[t] for t in sorted(self.mesh.triangles))
            ]
            V = self.cloud.p_bar[ids].copy()
            C = np.clip(np.rint(self.cloud.c[ids]), 0, 255).astype(np.uint8)
        index_of = {int(s): i for i, s in enumerate(ids)}
        faces = []
        for a, b, c in faces_raw:
            if a in index_of and b in index_of and c in index_of:
                faces.append((index_of[a], index_of[b], index_of[c]))
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if strip_free:
            used = np.zeros(len(ids), dtype=bool)
            if len(faces):
                used[faces.reshape(-1)] = True
            remap = -np.ones(len(ids), dtype=np.int64)
            remap[used] = np.arange(int(used.sum()))
            V, C = V[used], C[used]
            faces = remap[faces] if len(faces) else faces
        return V, C, faces
