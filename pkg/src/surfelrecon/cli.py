"""Command-line interface.

Subcommands: reconstruct (run the full pipeline on a TUM-layout
dataset), synth (generate a synthetic dataset), eval-mesh (mesh quality
report), eval-recon (accuracy/completeness against a synthetic scene).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as sio
from . import synth
from .camera import CameraIntrinsics
from .metrics import accuracy_completeness, mesh_quality
from .pipeline import Pipeline, PipelineConfig


def _coerce(current, text):
    if isinstance(current, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if current is None:
        try:
            return int(text)
        except ValueError:
            return float(text)
    return text


def apply_config_overrides(config: PipelineConfig, pairs):
    """Apply flat 'section.key=value' (or 'key=value') overrides."""
    for key, value in pairs:
        target = config
        parts = key.split(".")
        for p in parts[:-1]:
            if not hasattr(target, p):
                raise KeyError(f"unknown config section {key!r}")
            target = getattr(target, p)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise KeyError(f"unknown config key {key!r}")
        setattr(target, leaf, _coerce(getattr(target, leaf), value))
    return config


def _read_config_file(path):
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), v.strip()))
    return pairs


def _parse_size(text):
    w, h = text.lower().split("x")
    return int(w), int(h)


def cmd_reconstruct(args):
    records, skipped = sio.load_tum_dataset(args.dataset, args.trajectory)
    if skipped:
        print(f"skipped {skipped} frames without a pose match", file=sys.stderr)
    if not records:
        print("dataset contains no usable frames", file=sys.stderr)

    config = PipelineConfig()
    if args.config:
        apply_config_overrides(config, _read_config_file(args.config))
    for kv in args.set or []:
        k, v = kv.split("=", 1)
        apply_config_overrides(config, [(k, v)])
    config.meshing_mode = "lockstep" if args.lockstep else "async"
    config.seed = args.seed

    if records:
        probe, _ = sio.read_frame_images(records[0])
        h, w = probe.shape
        K = sio.read_intrinsics(args.dataset, w, h)
        if K is None:
            K = synth.default_intrinsics(w, h)
    else:
        K = synth.default_intrinsics(640, 480)

    pipe = Pipeline(config, K)
    if args.deform:
        pipe.add_deform_events(sio.load_deformation_events(args.deform))

    def frames():
        for rec in records:
            depth, color = sio.read_frame_images(rec, K.depth_scale)
            yield depth, color, rec.pose

    pipe.run(frames())
    V, C, F = pipe.export_mesh(strip_free=args.strip_free)
    sio.write_ply(args.out, V, C, F)
    print(f"wrote {args.out}: {len(V)} vertices, {len(F)} triangles")

    if args.timing:
        cols = ["frame", "associate", "blend", "integrate", "denoise",
                "remesh", "mesh", "deleted"]
        with open(args.timing, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in pipe.timings:
                f.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    return 0


def cmd_synth(args):
    scene = synth.make_scene(args.scene)
    w, h = _parse_size(args.size)
    K = synth.default_intrinsics(w, h)
    poses = synth.orbit_trajectory(args.frames)
    noise = synth.NoiseModel(gaussian_sigma_frac=args.noise,
                             depth_scale=K.depth_scale)
    frames = synth.generate_frames(scene, poses, K, noise, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    sio.write_tum_dataset(args.out, frames, K)
    synth.save_scene_description(scene, os.path.join(args.out, "scene.json"))
    gt = synth.ground_truth_samples(scene, poses, K)
    np.save(os.path.join(args.out, "gt_samples.npy"), gt)
    print(f"wrote {args.frames} frames and {len(gt)} surface samples to {args.out}")
    return 0


def cmd_eval_mesh(args):
    V, _, F = sio.read_ply(args.mesh)
    report = mesh_quality(V.astype(np.float64), F)
    d = report.as_dict()
    if args.report:
        sio.write_report(args.report, d)
    for k, v in d.items():
        print(f"{k}={v}")
    return 0


def cmd_eval_recon(args):
    V, _, _ = sio.read_ply(args.mesh)
    scene = synth.load_scene_description(
        os.path.join(args.scene, "scene.json")
    )
    gt = np.load(os.path.join(args.scene, "gt_samples.npy"))
    sweep = None
    if args.sweep:
        sweep = [args.tau * k / 5.0 for k in range(1, 11)]
    rep = accuracy_completeness(
        V.astype(np.float64), gt, scene.distance, args.tau, sweep
    )
    print(f"tau={rep.tau}")
    print(f"accuracy_pct={rep.accuracy_pct}")
    print(f"completeness_pct={rep.completeness_pct}")
    if args.sweep:
        print("tau,accuracy_pct,completeness_pct")
        for t, a, c in rep.curve:
            print(f"{t},{a},{c}")
    if args.report:
        sio.write_report(args.report, rep.as_dict())
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="surfelrecon",
        description="Surfel-cloud RGB-D reconstruction and triangulation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconstruct", help="run the pipeline on a dataset")
    r.add_argument("--dataset", required=True)
    r.add_argument("--trajectory", help="trajectory file (default: groundtruth.txt)")
    r.add_argument("--deform", help="deformation events sidecar")
    r.add_argument("--out", required=True, help="output PLY path")
    r.add_argument("--lockstep", action="store_true",
                   help="deterministic synchronous meshing")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", help="key=value config file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="single config override (repeatable)")
    r.add_argument("--timing", help="write per-stage timing CSV here")
    r.add_argument("--strip-free", action="store_true",
                   help="drop unreferenced vertices from the output")
    r.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--scene", required=True,
                   help="plane | sphere | box | thin-sheet")
    s.add_argument("--frames", type=int, default=120)
    s.add_argument("--size", default="160x120", help="WxH")
    s.add_argument("--noise", type=float, default=0.005,
                   help="depth noise sigma as a fraction of z")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    em = sub.add_parser("eval-mesh", help="mesh quality report")
    em.add_argument("--mesh", required=True)
    em.add_argument("--report")
    em.set_defaults(func=cmd_eval_mesh)

    er = sub.add_parser("eval-recon", help="accuracy/completeness vs scene")
    er.add_argument("--mesh", required=True)
    er.add_argument("--scene", required=True, help="synth dataset directory")
    er.add_argument("--tau", type=float, default=0.01)
    er.add_argument("--sweep", action="store_true")
    er.add_argument("--report")
    er.set_defaults(func=cmd_eval_recon)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
