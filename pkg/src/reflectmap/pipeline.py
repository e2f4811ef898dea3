"""Batch pipelines wiring detection, registration, mapping and classification.

Two map-building modes: ``build_map_pipeline`` trusts externally provided
poses and only fuses reflective planes; ``slam_pipeline`` estimates poses
itself by frame-to-frame plane registration plus scan-to-map refinement,
fusing reflective, ordinary and ground planes. The first frame defines the
world coordinate system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .classify import classify_cloud, filtered_cloud, mirror_back, save_labeled
from .config import PipelineConfig
from .detect import detect_frame, detect_reflective_planes, transform_detected
from .errors import (DegenerateNormals, MissingPose, NoValidModel,
                     RankDeficient, ReflectmapError, SingularNormalEquations)
from .evaluate import ConfusionMatrix
from .geometry import Pose
from .ingest import (OrganizedCloud, Trajectory, load_dual_scan, load_labels,
                     load_trajectory, save_dual_scan)
from .classify import load_labeled
from .planemap import (GlobalPlaneMap, match_to_map, prune_map,
                       scan_to_map_optimize, update_map)
from .register import RegistrationResult, register_frames

log = logging.getLogger("reflectmap")


def scan_files(scan_dir) -> List[Path]:
    files = sorted(Path(scan_dir).glob("scan_*.drs"))
    return files


def frame_id_of(path: Path) -> int:
    return int(path.stem.split("_")[1])


def build_map_pipeline(scan_dir, trajectory: Trajectory, cfg: PipelineConfig,
                       rng_seed: int = 0) -> GlobalPlaneMap:
    """Reflective-plane map from scans with trusted external poses.

    Raises:
        MissingPose: a scan frame has no trajectory entry.
    """
    gmap = GlobalPlaneMap()
    for path in scan_files(scan_dir):
        frame_id = frame_id_of(path)
        pose = trajectory.pose(frame_id)
        if pose is None:
            raise MissingPose(f"frame {frame_id} missing from trajectory")
        cloud = load_dual_scan(path)
        local = detect_reflective_planes(cloud, cfg.detect, rng_seed + frame_id)
        world = [transform_detected(p, pose) for p in local]
        matches = match_to_map(world, gmap, cfg.match, cfg.map.overlap_threshold)
        gmap = prune_map(update_map(gmap, world, matches), cfg.map)
        log.info("build-map frame %d: %d reflective planes, map size %d",
                 frame_id, len(world), len(gmap))
    return gmap


@dataclass
class SlamFrame:
    frame_id: int
    pose: Pose
    refined: bool
    degenerate: bool


@dataclass
class SlamResult:
    frames: List[SlamFrame] = field(default_factory=list)
    map: GlobalPlaneMap = field(default_factory=GlobalPlaneMap)

    def trajectory(self) -> Trajectory:
        return Trajectory([(f.frame_id, f.pose) for f in self.frames])

    def degenerate_frames(self) -> List[int]:
        return [f.frame_id for f in self.frames if f.degenerate]


def slam_pipeline(scan_dir, cfg: PipelineConfig, rng_seed: int = 0) -> SlamResult:
    """Plane SLAM over a scan directory; the first frame is the world frame.

    Frames whose plane geometry cannot constrain the pose (for example
    corridors, where normals span only two directions) fall back to the
    previous pose and are flagged degenerate instead of being emitted
    silently.
    """
    result = SlamResult()
    gmap = GlobalPlaneMap()
    prev_planes = None
    prev_pose = Pose.identity()
    reg_errors = (NoValidModel, RankDeficient, DegenerateNormals,
                  SingularNormalEquations)

    for path in scan_files(scan_dir):
        frame_id = frame_id_of(path)
        cloud = load_dual_scan(path)
        local = detect_frame(cloud, cfg.detect, rng_seed + frame_id)

        degenerate = False
        if prev_planes is None:
            initial = Pose.identity()
        else:
            try:
                rel = register_frames(local, prev_planes, cfg.match,
                                      cfg.register, rng_seed + frame_id)
                initial = prev_pose.compose(rel.pose)
            except reg_errors as exc:
                log.warning("slam frame %d: frame-to-frame failed (%s)",
                            frame_id, exc)
                initial = prev_pose
                degenerate = True

        refine = scan_to_map_optimize(local, gmap, initial, cfg.match,
                                      cfg.register, cfg.map,
                                      rng_seed + frame_id)
        pose = refine.pose
        if not refine.refined and prev_planes is not None:
            degenerate = True

        world = [transform_detected(p, pose) for p in local]
        matches = match_to_map(world, gmap, cfg.match, cfg.map.overlap_threshold)
        gmap = prune_map(update_map(gmap, world, matches), cfg.map)
        result.frames.append(SlamFrame(frame_id, pose, refine.refined, degenerate))
        prev_planes = local
        prev_pose = pose
        log.info("slam frame %d: %d planes, map %d, refined=%s degenerate=%s",
                 frame_id, len(local), len(gmap), refine.refined, degenerate)
    result.map = gmap
    return result


def classify_pipeline(scan_dir, trajectory: Trajectory, gmap: GlobalPlaneMap,
                      cfg: PipelineConfig, out_dir, mode: str = "full",
                      rng_seed: int = 0) -> List[Path]:
    """Label every scan against the map; write labeled, filtered and
    mirrored-back outputs per frame.

    Raises:
        MissingPose: a scan frame has no trajectory entry.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in scan_files(scan_dir):
        frame_id = frame_id_of(path)
        pose = trajectory.pose(frame_id)
        if pose is None:
            raise MissingPose(f"frame {frame_id} missing from trajectory")
        cloud = load_dual_scan(path)
        labeled = classify_cloud(cloud, pose, gmap, cfg.classify)
        lbc = out / f"labeled_{frame_id:06d}.lbc"
        save_labeled(labeled, frame_id, lbc)
        save_dual_scan(filtered_cloud(labeled, mode),
                       out / f"filtered_{frame_id:06d}.drs")
        mirrored = mirror_back(labeled, gmap)
        lines = [" ".join("%.12g" % v for v in p) for p in mirrored]
        (out / f"mirrored_{frame_id:06d}.xyz").write_text(
            "\n".join(lines) + ("\n" if lines else ""))
        written.append(lbc)
        log.info("classify frame %d: %s", frame_id, dict(labeled.label_counts()))
    return written


def evaluate_pipeline(labeled_dir, truth_dir) -> ConfusionMatrix:
    """Pool a confusion matrix over all (labeled, truth) frame pairs."""
    cm = ConfusionMatrix()
    labeled_files = sorted(Path(labeled_dir).glob("labeled_*.lbc"))
    if not labeled_files:
        raise ReflectmapError(f"no labeled_*.lbc files in {labeled_dir}")
    for path in labeled_files:
        frame_id, _, predicted = load_labeled(path)
        truth_path = Path(truth_dir) / f"labels_{frame_id:06d}.lbl"
        if not truth_path.exists():
            raise ReflectmapError(f"missing truth labels {truth_path}")
        truth = load_labels(truth_path)
        if truth.labels.size != predicted.size:
            raise ReflectmapError(
                f"frame {frame_id}: {predicted.size} predictions vs "
                f"{truth.labels.size} truth labels")
        cm = cm.merge(ConfusionMatrix.from_pairs(truth.labels, predicted))
    return cm
