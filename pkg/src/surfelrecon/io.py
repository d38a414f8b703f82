"""Dataset and mesh I/O.

Reads and writes RGB-D datasets in the TUM layout (depth/ and rgb/
folders with 16-bit depth PNGs, depth.txt / rgb.txt listings, and a
groundtruth.txt trajectory "t tx ty tz qx qy qz qw"), parses deformation
event sidecars, and reads/writes binary little-endian PLY meshes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, Pose

POSE_MATCH_TOLERANCE = 0.020  # seconds


@dataclass
class DatasetFrameRecord:
    timestamp: float
    depth_path: str
    color_path: str
    pose: Pose


def _read_listing(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            ts, rel = line.split()[:2]
            out.append((float(ts), rel))
    return out


def read_trajectory(path):
    """List of (timestamp, Pose) from a TUM trajectory file."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.split()
            if len(vals) != 8:
                raise ValueError(f"bad trajectory line: {line!r}")
            t = float(vals[0])
            tx, ty, tz, qx, qy, qz, qw = map(float, vals[1:])
            q = np.array([qx, qy, qz, qw])
            q = q / np.linalg.norm(q)
            out.append((t, Pose(q, np.array([tx, ty, tz]))))
    out.sort(key=lambda x: x[0])
    return out


def read_intrinsics(dirpath, width, height):
    """calibration.txt: 'fx fy cx cy [depth_scale]'; None if absent."""
    path = os.path.join(dirpath, "calibration.txt")
    if not os.path.exists(path):
        return None
    with open(path) as f:
        vals = f.read().split()
    fx, fy, cx, cy = map(float, vals[:4])
    scale = float(vals[4]) if len(vals) > 4 else 5000.0
    return CameraIntrinsics(fx, fy, cx, cy, width, height, scale)


def load_tum_dataset(dirpath, trajectory=None):
    """Synchronized frame records for a TUM-layout directory.

    Returns (records, skipped) where skipped counts frames without a
    trajectory pose within 20 ms.
    """
    depth_list = _read_listing(os.path.join(dirpath, "depth.txt"))
    rgb_list = _read_listing(os.path.join(dirpath, "rgb.txt"))
    traj_path = trajectory or os.path.join(dirpath, "groundtruth.txt")
    traj = read_trajectory(traj_path)
    if not traj:
        return [], len(depth_list)
    traj_ts = np.array([t for t, _ in traj])

    rgb_ts = np.array([t for t, _ in rgb_list]) if rgb_list else None

    records = []
    skipped = 0
    for ts, depth_rel in depth_list:
        k = int(np.argmin(np.abs(traj_ts - ts)))
        if abs(traj_ts[k] - ts) > POSE_MATCH_TOLERANCE:
            skipped += 1
            continue
        color_rel = None
        if rgb_ts is not None and len(rgb_ts):
            j = int(np.argmin(np.abs(rgb_ts - ts)))
            color_rel = rgb_list[j][1]
        records.append(
            DatasetFrameRecord(
                timestamp=ts,
                depth_path=os.path.join(dirpath, depth_rel),
                color_path=os.path.join(dirpath, color_rel)
                if color_rel else None,
                pose=traj[k][1],
            )
        )
    return records, skipped


def read_frame_images(record: DatasetFrameRecord, depth_scale=5000.0):
    """(depth in meters, color uint8 HxWx3) for one record."""
    img = Image.open(record.depth_path)
    raw = np.array(img)
    if raw.dtype not in (np.uint16, np.int32, np.uint8):
        raise ValueError(f"unsupported depth dtype {raw.dtype}")
    depth = raw.astype(np.float64) / depth_scale
    if record.color_path and os.path.exists(record.color_path):
        color = np.array(Image.open(record.color_path).convert("RGB"))
    else:
        color = np.zeros(depth.shape + (3,), dtype=np.uint8)
    return depth, color


def write_tum_dataset(dirpath, frames, K: CameraIntrinsics, fps=30.0):
    """Write (depth, color, pose) triples in the TUM layout."""
    os.makedirs(os.path.join(dirpath, "depth"), exist_ok=True)
    os.makedirs(os.path.join(dirpath, "rgb"), exist_ok=True)
    depth_lines, rgb_lines, traj_lines = [], [], []
    for i, (depth, color, pose) in enumerate(frames):
        ts = i / fps
        name = f"{ts:.6f}.png"
        raw = np.clip(np.rint(depth * K.depth_scale), 0, 65535).astype(
            np.uint16
        )
        Image.fromarray(raw.astype(np.int32), mode="I").convert("I;16").save(
            os.path.join(dirpath, "depth", name)
        )
        Image.fromarray(color, mode="RGB").save(
            os.path.join(dirpath, "rgb", name)
        )
        depth_lines.append(f"{ts:.6f} depth/{name}")
        rgb_lines.append(f"{ts:.6f} rgb/{name}")
        t = pose.translation
        q = pose.rotation
        traj_lines.append(
            f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
            f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}"
        )
    for name, lines in (
        ("depth.txt", depth_lines),
        ("rgb.txt", rgb_lines),
        ("groundtruth.txt", traj_lines),
    ):
        with open(os.path.join(dirpath, name), "w") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    with open(os.path.join(dirpath, "calibration.txt"), "w") as f:
        f.write(f"{K.fx} {K.fy} {K.cx} {K.cy} {K.depth_scale}\n")


def load_deformation_events(path):
    """Parse 'event <frame>' blocks of 'id dx dy dz' lines, sorted by
    frame index."""
    events = []
    current = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "event":
                if len(parts) != 2:
                    raise ValueError(f"line {lineno}: bad event header")
                current = (int(parts[1]), {})
                events.append(current)
            else:
                if current is None or len(parts) != 4:
                    raise ValueError(f"line {lineno}: bad offset line")
                try:
                    sid = int(parts[0])
                    current[1][sid] = np.array(
                        [float(parts[1]), float(parts[2]), float(parts[3])]
                    )
                except ValueError:
                    raise ValueError(
                        f"line {lineno}: bad offset line"
                    ) from None
    events.sort(key=lambda e: e[0])
    return events


# -- PLY ------------------------------------------------------------------

_VERTEX_DTYPE = np.dtype(
    [
        ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ]
)
_FACE_DTYPE = np.dtype([("count", "u1"), ("idx", "<i4", (3,))])


def write_ply(path, vertices, colors=None, faces=None):
    """Binary little-endian PLY: 15 bytes per vertex, 13 per face."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    n = len(vertices)
    faces = (
        np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces is not None
        else np.zeros((0, 3), dtype=np.int64)
    )
    if colors is None:
        colors = np.full((n, 3), 200, dtype=np.uint8)
    colors = np.asarray(colors).reshape(-1, 3)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    vdata = np.empty(n, dtype=_VERTEX_DTYPE)
    vdata["x"] = vertices[:, 0].astype(np.float32)
    vdata["y"] = vertices[:, 1].astype(np.float32)
    vdata["z"] = vertices[:, 2].astype(np.float32)
    vdata["red"] = colors[:, 0]
    vdata["green"] = colors[:, 1]
    vdata["blue"] = colors[:, 2]
    fdata = np.empty(len(faces), dtype=_FACE_DTYPE)
    fdata["count"] = 3
    fdata["idx"] = faces.astype(np.int32)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(vdata.tobytes())
        f.write(fdata.tobytes())


def read_ply(path):
    """Read meshes written by write_ply. Returns (vertices float32 (n,3),
    colors uint8 (n,3), faces int32 (m,3))."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError("not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    n_vertex = n_face = 0
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
    if "format binary_little_endian 1.0" not in header:
        raise ValueError("unsupported PLY format")
    body = data[end + len(b"end_header\n"):]
    vbytes = n_vertex * _VERTEX_DTYPE.itemsize
    vdata = np.frombuffer(body[:vbytes], dtype=_VERTEX_DTYPE)
    fdata = np.frombuffer(
        body[vbytes : vbytes + n_face * _FACE_DTYPE.itemsize],
        dtype=_FACE_DTYPE,
    )
    if np.any(fdata["count"] != 3):
        raise ValueError("only triangle faces supported")
    vertices = np.stack(
        [vdata["x"], vdata["y"], vdata["z"]], axis=1
    ) if n_vertex else np.zeros((0, 3), dtype=np.float32)
    colors = np.stack(
        [vdata["red"], vdata["green"], vdata["blue"]], axis=1
    ) if n_vertex else np.zeros((0, 3), dtype=np.uint8)
    faces = (
        fdata["idx"].copy() if n_face else np.zeros((0, 3), dtype=np.int32)
    )
    return vertices, colors, faces


def write_report(path, report_dict):
    """Flat key=value text plus a JSON twin next to it."""
    with open(path, "w") as f:
        for k, v in report_dict.items():
            f.write(f"{k}={v}\n")
    with open(str(path) + ".json", "w") as f:
        json.dump(report_dict, f, indent=2)
