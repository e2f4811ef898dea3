"""Command-line interface.

Subcommands: simulate, build-map, slam, classify, evaluate. Exit code 0 on
success, 2 on any package error (with a diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import scenes
from .config import load_config
from .errors import ReflectmapError
from .evaluate import format_report, write_report
from .ingest import load_trajectory, save_trajectory
from .pipeline import (build_map_pipeline, classify_pipeline,
                       evaluate_pipeline, slam_pipeline)
from .planemap import load_map, save_map
from .sim import load_scene, render_sequence

log = logging.getLogger("reflectmap")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflectmap",
        description="Reflective-surface detection and plane mapping for "
                    "dual-return LiDAR scans")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scan sequence")
    p.add_argument("--scene", required=True,
                   help="fixture name (%s) or a .scn file"
                        % ", ".join(sorted(scenes.SCENES)))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.0,
                   help="range noise sigma in meters")
    _add_common(p)

    p = sub.add_parser("build-map", help="fuse reflective planes using "
                                         "externally provided poses")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True, help=".tum trajectory file")
    p.add_argument("--out", required=True, help="output .gpm map file")
    _add_common(p)

    p = sub.add_parser("slam", help="plane SLAM: estimate poses and the map")
    p.add_argument("--scans", required=True)
    p.add_argument("--out-map", required=True)
    p.add_argument("--out-poses", required=True)
    p.add_argument("--out-report", default=None,
                   help="per-frame status file (default <out-poses>.report)")
    _add_common(p)

    p = sub.add_parser("classify", help="label scans against a plane map")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("full", "indoor"), default="full",
                   help="indoor additionally removes obstacle-behind-glass")
    _add_common(p)

    p = sub.add_parser("evaluate", help="compare labeled output to ground truth")
    p.add_argument("--labeled", required=True, help="directory of .lbc files")
    p.add_argument("--truth", required=True, help="directory of .lbl files")
    p.add_argument("--out", default=None,
                   help="report basename (writes .txt and .kv)")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        cfg.log_resolved()
        if args.command == "simulate":
            if args.scene in scenes.SCENES:
                scene, traj, sensor = scenes.build_fixture(args.scene, args.frames)
            else:
                scene = load_scene(args.scene)
                traj = scenes.box_room_trajectory(args.frames or 50)
                sensor = scenes.sensor_coarse()
            render_sequence(scene, sensor, traj, args.out,
                            rng_seed=args.seed, noise_sigma=args.noise)
            print(f"wrote {len(traj)} frames to {args.out}")
        elif args.command == "build-map":
            traj = load_trajectory(args.poses)
            gmap = build_map_pipeline(args.scans, traj, cfg, args.seed)
            save_map(gmap, args.out)
            print(f"map with {len(gmap)} planes "
                  f"({len(gmap.reflective())} reflective) -> {args.out}")
        elif args.command == "slam":
            result = slam_pipeline(args.scans, cfg, args.seed)
            save_map(result.map, args.out_map)
            save_trajectory(result.trajectory(), args.out_poses)
            report = args.out_report or (args.out_poses + ".report")
            lines = [f"{f.frame_id} refined={int(f.refined)} "
                     f"degenerate={int(f.degenerate)}" for f in result.frames]
            Path(report).write_text("\n".join(lines) + "\n")
            bad = result.degenerate_frames()
            print(f"slam: {len(result.frames)} frames, map {len(result.map)} "
                  f"planes, {len(bad)} degenerate frames -> {args.out_map}")
            if bad:
                print(f"degenerate frames: {bad[:10]}"
                      + (" ..." if len(bad) > 10 else ""))
        elif args.command == "classify":
            traj = load_trajectory(args.poses)
            gmap = load_map(args.map)
            written = classify_pipeline(args.scans, traj, gmap, cfg,
                                        args.out, mode=args.mode,
                                        rng_seed=args.seed)
            print(f"labeled {len(written)} frames -> {args.out}")
        elif args.command == "evaluate":
            cm = evaluate_pipeline(args.labeled, args.truth)
            print(format_report(cm))
            if args.out:
                write_report(cm, args.out + ".txt", args.out + ".kv")
    except ReflectmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
