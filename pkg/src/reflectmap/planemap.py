"""Global plane map: scan-to-map matching, pose refinement, weighted plane
fusion, hull merging and lifecycle pruning.

Map serialization (.gpm, text): header ``GPM1 n_planes``; per plane a line
``kind nx ny nz d observations n_vertices``, the hull vertices as ``u v``
lines, then two basis lines ``U ux uy uz`` and ``V vx vy vz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .detect import DetectedPlane, transform_detected
from .errors import (DegenerateNormals, NoValidModel, ParseError,
                     RankDeficient, SingularNormalEquations)
from .geometry import (BoundaryHull, Plane, PlaneKind, Pose,
                       hull_overlap_ratio, merge_hulls)
from .register import (MatchThresholds, PlaneMatch, RegisterConfig,
                       RegistrationResult, gauss_newton_refine,
                       ransac_match_filter)


@dataclass
class MapConfig:
    overlap_threshold: float = 0.7
    probation_frames: int = 10
    min_observations: int = 3


@dataclass(frozen=True)
class MapPlane:
    """A world-frame plane landmark with boundary and lifecycle counters."""

    plane: Plane
    hull: BoundaryHull
    observations: int
    first_seen: int
    last_seen: int

    @property
    def kind(self) -> PlaneKind:
        return self.plane.kind

    def centroid(self) -> np.ndarray:
        return self.hull.centroid3()

    def area(self) -> float:
        return self.hull.area()


@dataclass
class GlobalPlaneMap:
    planes: List[MapPlane] = field(default_factory=list)
    frame_count: int = 0

    def reflective(self) -> List[MapPlane]:
        return [p for p in self.planes if p.kind == PlaneKind.REFLECTIVE]

    def __len__(self) -> int:
        return len(self.planes)


def match_to_map(local: Sequence[DetectedPlane], gmap: GlobalPlaneMap,
                 thresholds: Optional[MatchThresholds] = None,
                 overlap_threshold: float = 0.7) -> List[PlaneMatch]:
    """Match world-frame local planes against the map.

    Applies the normal / offset / centroid gates, then requires the hull
    overlap proportion (local hull projected onto the map plane) to reach the
    threshold; the inter-frame area-ratio gate is not used here. One-to-one by
    greedy best cosine.
    """
    thr = thresholds or MatchThresholds()
    candidates: List[PlaneMatch] = []
    for i, lp in enumerate(local):
        for j, mp in enumerate(gmap.planes):
            if lp.plane.kind != mp.kind:
                continue
            cos = float(lp.plane.normal @ mp.plane.normal)
            if cos < thr.min_cos:
                continue
            d_gap = abs(lp.plane.d - mp.plane.d)
            if d_gap > thr.max_d_gap:
                continue
            c_gap = float(np.linalg.norm(lp.centroid - mp.centroid()))
            if c_gap > thr.max_centroid_gap:
                continue
            overlap = hull_overlap_ratio(mp.hull, lp.hull)
            if overlap < overlap_threshold:
                continue
            areas = sorted((lp.area, mp.area()))
            ratio = areas[1] / max(areas[0], 1e-12)
            candidates.append(PlaneMatch(i, j, cos, d_gap, c_gap, ratio,
                                         overlap=overlap))
    candidates.sort(key=lambda m: (-m.cos_angle, m.source_idx, m.target_idx))
    used_s, used_t = set(), set()
    matches = []
    for m in candidates:
        if m.source_idx in used_s or m.target_idx in used_t:
            continue
        used_s.add(m.source_idx)
        used_t.add(m.target_idx)
        matches.append(m)
    matches.sort(key=lambda m: (m.source_idx, m.target_idx))
    return matches


def _map_as_detected(gmap: GlobalPlaneMap) -> List[DetectedPlane]:
    """View map planes through the DetectedPlane interface for registration."""
    return [DetectedPlane(plane=p.plane, hull=p.hull,
                          inlier_count=p.observations, area=p.area(),
                          centroid=p.centroid(), source="map")
            for p in gmap.planes]


def scan_to_map_optimize(local: Sequence[DetectedPlane], gmap: GlobalPlaneMap,
                         initial_pose: Pose,
                         thresholds: Optional[MatchThresholds] = None,
                         reg_cfg: Optional[RegisterConfig] = None,
                         map_cfg: Optional[MapConfig] = None,
                         rng_seed: int = 0) -> RegistrationResult:
    """Refine a frame's world pose against the map.

    Local planes are first transformed by the initial pose; the computed
    correction is composed onto it. When matching or the model search fails
    the initial pose is returned flagged unrefined.
    """
    map_cfg = map_cfg or MapConfig()
    local_world = [transform_detected(p, initial_pose) for p in local]
    targets = _map_as_detected(gmap)
    matches = match_to_map(local_world, gmap, thresholds,
                           map_cfg.overlap_threshold)
    try:
        pose0, inliers = ransac_match_filter(matches, local_world, targets,
                                             reg_cfg, rng_seed)
        result = gauss_newton_refine(inliers, local_world, targets, pose0, reg_cfg)
    except (NoValidModel, RankDeficient, DegenerateNormals,
            SingularNormalEquations):
        return RegistrationResult(pose=initial_pose, inlier_matches=[],
                                  iterations=0, final_residual=math.inf,
                                  converged=False, refined=False)
    return replace(result, pose=result.pose.compose(initial_pose))


def _fuse_planes(mp: MapPlane, lp: DetectedPlane) -> Plane:
    """Observation-count-weighted average of plane parameters.

    The local normal is sign-aligned with the map normal before averaging so
    the d >= 0 convention cannot cancel the two.
    """
    k = mp.observations
    n_l, d_l = lp.plane.normal, lp.plane.d
    if float(mp.plane.normal @ n_l) < 0.0:
        n_l, d_l = -n_l, -d_l
    n = k * mp.plane.normal + n_l
    n = n / np.linalg.norm(n)
    d = (k * mp.plane.d + d_l) / (k + 1)
    return Plane(n, d, lp.plane.kind)


def update_map(gmap: GlobalPlaneMap, local: Sequence[DetectedPlane],
               matches: Sequence[PlaneMatch]) -> GlobalPlaneMap:
    """Fuse matched planes into the map and insert unmatched ones.

    Matched planes: normal = weighted mean (weights = observation count vs 1),
    renormalized and sign-fixed; d = weighted mean; hull = merge of both hulls
    projected onto the fused plane; observations incremented. Unmatched local
    planes are inserted with one observation. The frame counter advances by 1.
    """
    frame_idx = gmap.frame_count
    matched_local = {m.source_idx: m for m in matches}
    new_planes = list(gmap.planes)
    for m in matches:
        mp = new_planes[m.target_idx]
        lp = local[m.source_idx]
        fused = _fuse_planes(mp, lp)
        hull = merge_hulls(mp.hull, lp.hull, fused)
        new_planes[m.target_idx] = MapPlane(plane=fused, hull=hull,
                                            observations=mp.observations + 1,
                                            first_seen=mp.first_seen,
                                            last_seen=frame_idx)
    for i, lp in enumerate(local):
        if i in matched_local:
            continue
        new_planes.append(MapPlane(plane=lp.plane, hull=lp.hull,
                                   observations=1, first_seen=frame_idx,
                                   last_seen=frame_idx))
    return GlobalPlaneMap(planes=_consolidate(new_planes),
                          frame_count=frame_idx + 1)


def _duplicate_pair(a: MapPlane, b: MapPlane) -> bool:
    if a.kind != b.kind:
        return False
    cos = float(np.clip(a.plane.normal @ b.plane.normal, -1.0, 1.0))
    if math.degrees(math.acos(cos)) > 5.0 or abs(a.plane.d - b.plane.d) > 0.05:
        return False
    return hull_overlap_ratio(a.hull, b.hull) >= 0.7


def _merge_map_planes(a: MapPlane, b: MapPlane) -> MapPlane:
    ka, kb = a.observations, b.observations
    n_b, d_b = b.plane.normal, b.plane.d
    if float(a.plane.normal @ n_b) < 0.0:
        n_b, d_b = -n_b, -d_b
    n = ka * a.plane.normal + kb * n_b
    n = n / np.linalg.norm(n)
    d = (ka * a.plane.d + kb * d_b) / (ka + kb)
    plane = Plane(n, d, a.plane.kind)
    return MapPlane(plane=plane, hull=merge_hulls(a.hull, b.hull, plane),
                    observations=ka + kb,
                    first_seen=min(a.first_seen, b.first_seen),
                    last_seen=max(a.last_seen, b.last_seen))


def _consolidate(planes: List[MapPlane]) -> List[MapPlane]:
    """Merge map planes that have converged onto the same surface, keeping the
    no-duplicate map invariant."""
    planes = list(planes)
    merged = True
    while merged:
        merged = False
        for i in range(len(planes)):
            for j in range(i + 1, len(planes)):
                if _duplicate_pair(planes[i], planes[j]):
                    planes[i] = _merge_map_planes(planes[i], planes[j])
                    del planes[j]
                    merged = True
                    break
            if merged:
                break
    return planes


def prune_map(gmap: GlobalPlaneMap, cfg: Optional[MapConfig] = None) -> GlobalPlaneMap:
    """Drop planes past probation that were observed too rarely."""
    cfg = cfg or MapConfig()
    kept = [p for p in gmap.planes
            if not (gmap.frame_count - p.first_seen >= cfg.probation_frames
                    and p.observations < cfg.min_observations)]
    return GlobalPlaneMap(planes=kept, frame_count=gmap.frame_count)


_FMT = "%.12g"


def save_map(gmap: GlobalPlaneMap, path) -> None:
    lines = [f"GPM1 {len(gmap.planes)}"]
    for p in gmap.planes:
        n = p.plane.normal
        lines.append(f"{p.plane.kind.value} {_FMT % n[0]} {_FMT % n[1]} "
                     f"{_FMT % n[2]} {_FMT % p.plane.d} {p.observations} "
                     f"{p.hull.vertices.shape[0]}")
        for u, v in p.hull.vertices:
            lines.append(f"{_FMT % u} {_FMT % v}")
        lines.append("U " + " ".join(_FMT % x for x in p.hull.basis_u))
        lines.append("V " + " ".join(_FMT % x for x in p.hull.basis_v))
    Path(path).write_text("\n".join(lines) + "\n")


def load_map(path) -> GlobalPlaneMap:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("GPM1"):
        raise ParseError(f"{path}: bad header")
    try:
        n_planes = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: bad header") from exc
    planes: List[MapPlane] = []
    pos = 1
    for _ in range(n_planes):
        try:
            parts = lines[pos].split()
            kind = PlaneKind(parts[0])
            nx, ny, nz, d = (float(v) for v in parts[1:5])
            observations = int(parts[5])
            n_verts = int(parts[6])
            verts = np.array([[float(v) for v in lines[pos + 1 + i].split()]
                              for i in range(n_verts)])
            u_line = lines[pos + 1 + n_verts].split()
            v_line = lines[pos + 2 + n_verts].split()
            if u_line[0] != "U" or v_line[0] != "V":
                raise ParseError(f"{path}: missing basis lines")
            basis_u = np.array([float(v) for v in u_line[1:4]])
            basis_v = np.array([float(v) for v in v_line[1:4]])
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}: malformed plane block") from exc
        plane = Plane(np.array([nx, ny, nz]), d, kind)
        hull = BoundaryHull(plane, basis_u, basis_v, verts)
        planes.append(MapPlane(plane=plane, hull=hull, observations=observations,
                               first_seen=0, last_seen=0))
        pos += 3 + n_verts
    return GlobalPlaneMap(planes=planes, frame_count=0)
