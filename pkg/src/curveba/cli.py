"""Command-line entry points: synth | run | eval | inspect."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .camera import Intrinsics, read_pose_file, write_pose_file
from .config import PipelineConfig
from .curves import read_curves, sample_segment, segments_from_params
from .imgio import read_image
from .pipeline import PipelineError, run_pipeline
from .synth import generate_orbit, make_texture, perturb_positions, trajectory_error, write_scene


def _cmd_synth(args) -> int:
    if args.texture:
        texture = read_image(args.texture)
    else:
        texture = make_texture(seed=args.seed)
    intr = Intrinsics(args.fx, args.fy, args.cx, args.cy, args.width, args.height)
    scene = generate_orbit(texture, args.views, args.radius, args.height_above, intr)
    manifest = write_scene(scene, args.out, args.noise, args.seed, model=args.noise_model)
    if args.perturb > 0:
        perturbed = perturb_positions(scene.poses, args.perturb, args.seed)
        write_pose_file(os.path.join(args.out, "poses_init.txt"), perturbed)
    if args.verbose:
        print(f"scene written: {manifest}")
    print(manifest)
    return 0


def _cmd_run(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    try:
        result = run_pipeline(cfg, args.out, verbose=args.verbose)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if "rmse" in result:
        print(f"rmse {result['rmse']:.9g}")
        print(f"mean {result['mean']:.9g}")
        print(f"median {result['median']:.9g}")
    print(f"curves {result['n_curves']}")
    return 0


def _cmd_eval(args) -> int:
    _, gt = read_pose_file(args.gt)
    _, est = read_pose_file(args.est)
    if len(gt) != len(est):
        print("error: trajectory length mismatch", file=sys.stderr)
        return 1
    gt_pos = np.stack([p.center() for p in gt])
    est_pos = np.stack([p.center() for p in est])
    rmse, mean, median = trajectory_error(est_pos, gt_pos)
    print(f"rmse {rmse:.9g}")
    print(f"mean {mean:.9g}")
    print(f"median {median:.9g}")
    return 0


def _cmd_inspect(args) -> int:
    curves = read_curves(args.curves)
    for cid in sorted(curves):
        params = curves[cid]
        print(f"curve {cid} {params.segment_count}")
        for k, seg in enumerate(segments_from_params(params)):
            print(f"segment {k}")
            for pt in sample_segment(seg, args.samples):
                print(" ".join(format(v, ".9g") for v in pt))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="curveba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planar-orbit scene")
    p.add_argument("--texture", default="", help="texture image (default: procedural)")
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--height-above", type=float, default=1.5)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--noise-model", default="uniform", choices=["uniform", "gaussian"])
    p.add_argument("--perturb", type=float, default=0.0, help="also write perturbed init poses")
    p.add_argument("--fx", type=float, default=500.0)
    p.add_argument("--fy", type=float, default=500.0)
    p.add_argument("--cx", type=float, default=319.5)
    p.add_argument("--cy", type=float, default=239.5)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="trajectory error between two pose files")
    p.add_argument("gt")
    p.add_argument("est")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="print a curve file as sampled points")
    p.add_argument("curves")
    p.add_argument("--samples", type=int, default=11)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_inspect)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
