"""Per-scan plane detection.

Reflective surfaces are found two ways: intensity peaks along near-horizontal
rings (rise from below a low threshold to a maximum above a high threshold,
then a matching fall, validated vertically on neighboring rings), and
dual-return divergence (cells where the strongest and last echo disagree in
range). Ordinary planes come from normal-based region growing; the ground is
fitted separately on the z < 0 subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (BoundaryHull, Plane, PlaneKind, Pose, fit_plane_ransac,
                       hull_overlap_ratio, points_in_hull, transform_plane)
from .ingest import LAYER_LAST, LAYER_STRONGEST, OrganizedCloud, Return

SOURCE_INTENSITY_PEAK = "intensity_peak"
SOURCE_DUAL_RETURN = "dual_return"
SOURCE_REGION_GROWING = "region_growing"
SOURCE_GROUND = "ground"


@dataclass
class DetectConfig:
    """Detection thresholds; every value is exposed in the pipeline config file."""

    intensity_low: float = 0.2
    intensity_high: float = 0.8
    max_gap: float = 0.5              # meters between adjacent run points
    min_run_length: int = 5
    horizontal_elev_deg: float = 2.0  # |ring elevation| counting as horizontal
    divergence_threshold: float = 0.1
    min_reflective_inliers: int = 100
    min_peak_inliers: int = 15
    ransac_dist: float = 0.05
    ransac_iters: int = 500
    normal_k: int = 16
    grow_radius: float = 0.5
    normal_angle_deg: float = 3.0
    min_ordinary_inliers: int = 200
    min_plane_area: float = 0.3
    density_threshold: float = 100.0  # points per square meter
    low_density_min_inliers: int = 500
    max_planes_per_frame: int = 25
    min_ground_inliers: int = 100
    dedup_overlap: float = 0.7


@dataclass(frozen=True)
class DetectedPlane:
    """A fitted plane with its convex boundary and inlier statistics."""

    plane: Plane
    hull: BoundaryHull
    inlier_count: int
    area: float
    centroid: np.ndarray
    source: str

    def __post_init__(self):
        c = np.asarray(self.centroid, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "centroid", c)


@dataclass
class DualReturnMask:
    """Per-cell dual-return agreement flags and candidate surface returns."""

    diverged: np.ndarray  # (n_rings, n_bins) bool
    candidate_xyz: np.ndarray
    candidate_intensity: np.ndarray

    def candidates(self) -> np.ndarray:
        """(N, 3) candidate surface points (strongest-layer, diverged cells)."""
        return self.candidate_xyz[self.diverged]


def _make_detected(plane: Plane, inlier_pts: np.ndarray, source: str,
                   kind: PlaneKind) -> DetectedPlane:
    plane = Plane(plane.normal, plane.d, kind)
    hull = BoundaryHull.from_points(plane, inlier_pts)
    return DetectedPlane(plane=plane, hull=hull,
                         inlier_count=int(inlier_pts.shape[0]),
                         area=hull.area(),
                         centroid=inlier_pts.mean(axis=0),
                         source=source)


def transform_detected(dp: DetectedPlane, pose: Pose) -> DetectedPlane:
    """Rigidly move a detected plane (plane, hull, centroid) by a pose."""
    plane = transform_plane(dp.plane, pose)
    moved = pose.apply(dp.hull.lift())
    hull = BoundaryHull.from_points(plane, moved)
    return DetectedPlane(plane=plane, hull=hull, inlier_count=dp.inlier_count,
                         area=hull.area(), centroid=pose.apply(dp.centroid),
                         source=dp.source)


def _horizontal_rings(cloud: OrganizedCloud, cfg: DetectConfig) -> List[int]:
    elev = np.degrees(cloud.ring_elevations())
    return [r for r in range(cloud.n_rings)
            if not math.isnan(elev[r]) and abs(elev[r]) <= cfg.horizontal_elev_deg]


def _is_rise_fall(values: Sequence[float]) -> bool:
    """Monotone non-decreasing then non-increasing, with a genuine peak."""
    if len(values) < 3:
        return False
    peak = int(np.argmax(values))
    rise = all(values[i] <= values[i + 1] + 1e-12 for i in range(peak))
    fall = all(values[i] >= values[i + 1] - 1e-12 for i in range(peak, len(values) - 1))
    return rise and fall


def _run_is_peak(intens: List[float], cfg: DetectConfig) -> bool:
    if len(intens) < cfg.min_run_length:
        return False
    if not _is_rise_fall(intens):
        return False
    if max(intens) < cfg.intensity_high:
        return False
    # must climb out of and fall back below the low threshold
    return intens[0] < cfg.intensity_low and intens[-1] < cfg.intensity_low


def find_intensity_peaks(cloud: OrganizedCloud,
                         cfg: DetectConfig) -> List[Set[Tuple[int, int]]]:
    """Runs of strongest-layer points along horizontal rings whose intensity
    rises from below the low threshold to at least the high threshold and
    falls back, with bounded gaps, validated on the rings above and below."""
    grid = cloud.strongest
    peaks: List[Set[Tuple[int, int]]] = []
    for ring in _horizontal_rings(cloud, cfg):
        run_bins: List[int] = []
        run_intens: List[float] = []

        def flush():
            if run_intens and _run_is_peak(run_intens, cfg):
                peak_bin = run_bins[int(np.argmax(run_intens))]
                if _vertical_ok(cloud, ring, peak_bin, cfg):
                    peaks.append({(ring, b) for b in run_bins})

        prev_xyz = None
        for b in range(cloud.n_bins):
            if not grid.valid[ring, b]:
                flush()
                run_bins, run_intens, prev_xyz = [], [], None
                continue
            xyz = grid.xyz[ring, b]
            if prev_xyz is not None and np.linalg.norm(xyz - prev_xyz) > cfg.max_gap:
                flush()
                run_bins, run_intens = [], []
            run_bins.append(b)
            run_intens.append(float(grid.intensity[ring, b]))
            prev_xyz = xyz
        flush()
    return peaks


def _vertical_ok(cloud: OrganizedCloud, ring: int, peak_bin: int,
                 cfg: DetectConfig) -> bool:
    """Check the rise-then-fall ordering across the two rings above and below."""
    grid = cloud.strongest
    below, above = [], []
    for r in (ring - 2, ring - 1):
        if 0 <= r < cloud.n_rings and grid.valid[r, peak_bin]:
            below.append(float(grid.intensity[r, peak_bin]))
    for r in (ring + 1, ring + 2):
        if r < cloud.n_rings and grid.valid[r, peak_bin]:
            above.append(float(grid.intensity[r, peak_bin]))
    if not below or not above:
        return False
    profile = below + [float(grid.intensity[ring, peak_bin])] + above
    return _is_rise_fall(profile) and int(np.argmax(profile)) == len(below)


def detect_dual_return(cloud: OrganizedCloud, cfg: DetectConfig) -> DualReturnMask:
    """Flag cells whose strongest and last ranges diverge; the candidate surface
    return is the nearer one, taken from the strongest layer."""
    s, l = cloud.strongest, cloud.last
    both = s.valid & l.valid
    diverged = both & (np.abs(s.ranges - l.ranges) > cfg.divergence_threshold)
    return DualReturnMask(diverged=diverged,
                          candidate_xyz=s.xyz.copy(),
                          candidate_intensity=s.intensity.copy())


def fit_reflective_planes(candidates: np.ndarray, cfg: DetectConfig,
                          rng_seed: int, source: str = SOURCE_DUAL_RETURN,
                          min_inliers: Optional[int] = None) -> List[DetectedPlane]:
    """Repeated RANSAC over candidate surface points; stop when too few remain
    or a fit fails. Accepted planes get disjoint inlier sets."""
    if min_inliers is None:
        min_inliers = cfg.min_reflective_inliers
    pts = np.atleast_2d(np.asarray(candidates, dtype=float))
    planes: List[DetectedPlane] = []
    round_ = 0
    while pts.shape[0] >= max(min_inliers, 3):
        fit = fit_plane_ransac(pts, cfg.ransac_dist, min_inliers,
                               cfg.ransac_iters, rng_seed + round_)
        if fit is None:
            break
        plane, inliers = fit
        try:
            planes.append(_make_detected(plane, pts[inliers], source,
                                         PlaneKind.REFLECTIVE))
        except Exception:
            break  # degenerate hull (collinear inliers)
        keep = np.ones(pts.shape[0], dtype=bool)
        keep[inliers] = False
        pts = pts[keep]
        round_ += 1
    return planes


def extract_ground_plane(points: np.ndarray, cfg: DetectConfig,
                         rng_seed: int) -> Optional[DetectedPlane]:
    """RANSAC plane on the z < 0 subset of sensor-frame points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    below = pts[pts[:, 2] < 0.0]
    if below.shape[0] < max(cfg.min_ground_inliers, 3):
        return None
    fit = fit_plane_ransac(below, cfg.ransac_dist, cfg.min_ground_inliers,
                           cfg.ransac_iters, rng_seed)
    if fit is None:
        return None
    plane, inliers = fit
    try:
        return _make_detected(plane, below[inliers], SOURCE_GROUND, PlaneKind.GROUND)
    except Exception:
        return None


def _estimate_normals(pts: np.ndarray, k: int
                      ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point normals from k-nearest-neighbor covariance. Also returns the
    neighbor index and distance tables, reused by region growing."""
    tree = cKDTree(pts)
    k = min(k, pts.shape[0])
    dist, idx = tree.query(pts, k=k, workers=-1)
    if idx.ndim == 1:
        dist, idx = dist[:, None], idx[:, None]
    neigh = pts[idx]                       # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    return normals, idx, dist


def _grow_regions(pts: np.ndarray, normals: np.ndarray, neighbors: np.ndarray,
                  neighbor_dist: np.ndarray, cfg: DetectConfig) -> List[np.ndarray]:
    """Group points whose neighbors are close and share normal direction."""
    n = pts.shape[0]
    cos_min = math.cos(math.radians(cfg.normal_angle_deg))
    assigned = np.full(n, -1, dtype=np.int64)
    regions: List[np.ndarray] = []
    for seed in range(n):
        if assigned[seed] >= 0:
            continue
        rid = len(regions)
        assigned[seed] = rid
        queue = [seed]
        members = [seed]
        while queue:
            cur = queue.pop()
            nb = neighbors[cur]
            free = assigned[nb] < 0
            close = neighbor_dist[cur] <= cfg.grow_radius
            cand = nb[free & close]
            if cand.size == 0:
                continue
            grow = cand[np.abs(normals[cand] @ normals[cur]) >= cos_min]
            assigned[grow] = rid
            queue.extend(grow.tolist())
            members.extend(grow.tolist())
        regions.append(np.array(members, dtype=np.int64))
    return regions


def extract_ordinary_planes(points: np.ndarray, cfg: DetectConfig,
                            rng_seed: int) -> List[DetectedPlane]:
    """Region-growing segmentation followed by per-region RANSAC plane fits.

    Accepts a region's plane when it has enough inliers and area; low-density
    planes (under cfg.density_threshold points per square meter) need
    cfg.low_density_min_inliers inliers instead. Stops after
    cfg.max_planes_per_frame accepted planes.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < cfg.min_ordinary_inliers:
        return []
    normals, neighbors, neighbor_dist = _estimate_normals(pts, cfg.normal_k)
    regions = sorted(_grow_regions(pts, normals, neighbors, neighbor_dist, cfg),
                     key=len, reverse=True)
    planes: List[DetectedPlane] = []
    for region in regions:
        if len(planes) >= cfg.max_planes_per_frame:
            break
        if region.size < cfg.min_ordinary_inliers:
            continue
        fit = fit_plane_ransac(pts[region], cfg.ransac_dist,
                               cfg.min_ordinary_inliers, cfg.ransac_iters,
                               rng_seed + region.size)
        if fit is None:
            continue
        plane, inliers = fit
        inlier_pts = pts[region][inliers]
        try:
            dp = _make_detected(plane, inlier_pts, SOURCE_REGION_GROWING,
                                PlaneKind.ORDINARY)
        except Exception:
            continue
        if dp.area < cfg.min_plane_area:
            continue
        density = dp.inlier_count / dp.area
        if density < cfg.density_threshold \
                and dp.inlier_count < cfg.low_density_min_inliers:
            continue
        planes.append(dp)
    return planes


def _dedup_planes(planes: List[DetectedPlane], overlap: float) -> List[DetectedPlane]:
    """Drop near-duplicate planes (same surface seen by both detectors),
    keeping the higher-inlier one. Only near-coplanar pairs count as
    duplicates; parallel planes at different offsets are distinct."""
    kept: List[DetectedPlane] = []
    for dp in sorted(planes, key=lambda p: -p.inlier_count):
        dup = any(abs(float(k.plane.normal @ dp.plane.normal)) >= 0.9
                  and abs(k.plane.d - dp.plane.d) <= 0.1
                  and hull_overlap_ratio(k.hull, dp.hull) >= overlap
                  for k in kept)
        if not dup:
            kept.append(dp)
    return kept


def _peak_region_points(cloud: OrganizedCloud, cells: Set[Tuple[int, int]]
                        ) -> np.ndarray:
    """Run points plus the vertically validated neighbors two rings up/down,
    so the region spans two dimensions and the fit is well posed."""
    pts = []
    for r, b in sorted(cells):
        for rr in (r - 2, r - 1, r, r + 1, r + 2):
            if 0 <= rr < cloud.n_rings and cloud.strongest.valid[rr, b]:
                pts.append(cloud.strongest.xyz[rr, b])
    return np.asarray(pts)


def detect_reflective_planes(cloud: OrganizedCloud, cfg: DetectConfig,
                             rng_seed: int) -> List[DetectedPlane]:
    """Frame-level reflective-plane detection: intensity peaks + dual return,
    deduplicated by hull overlap."""
    peak_planes: List[DetectedPlane] = []
    for i, cells in enumerate(find_intensity_peaks(cloud, cfg)):
        pts = _peak_region_points(cloud, cells)
        if pts.shape[0] < max(cfg.min_peak_inliers, 3):
            continue
        fit = fit_plane_ransac(pts, cfg.ransac_dist, cfg.min_peak_inliers,
                               cfg.ransac_iters, rng_seed + i)
        if fit is None:
            continue
        plane, inliers = fit
        try:
            peak_planes.append(_make_detected(plane, pts[inliers],
                                              SOURCE_INTENSITY_PEAK,
                                              PlaneKind.REFLECTIVE))
        except Exception:
            continue
    mask = detect_dual_return(cloud, cfg)
    dual_planes = []
    if np.any(mask.diverged):
        dual_planes = fit_reflective_planes(mask.candidates(), cfg, rng_seed + 7919,
                                            source=SOURCE_DUAL_RETURN)
    return _dedup_planes(dual_planes + peak_planes, cfg.dedup_overlap)


def reflection_free_points(cloud: OrganizedCloud, cfg: DetectConfig) -> np.ndarray:
    """Strongest-layer points with reflection-affected cells removed.

    Drops diverged dual-return cells and intensity-peak runs, leaving the
    input for ordinary-plane extraction.
    """
    mask = detect_dual_return(cloud, cfg)
    keep = cloud.strongest.valid & ~mask.diverged
    for cells in find_intensity_peaks(cloud, cfg):
        for r, b in cells:
            keep[r, b] = False
    return cloud.strongest.xyz[keep]


def detect_frame(cloud: OrganizedCloud, cfg: DetectConfig, rng_seed: int
                 ) -> List[DetectedPlane]:
    """Full per-frame plane set: reflective + ground + ordinary planes."""
    reflective = detect_reflective_planes(cloud, cfg, rng_seed)
    pts = reflection_free_points(cloud, cfg)
    planes = list(reflective)
    ground = extract_ground_plane(pts, cfg, rng_seed + 13)
    if ground is not None:
        planes.append(ground)
        dist = np.abs(ground.plane.signed_distance(pts))
        pts = pts[dist > cfg.ransac_dist]
    planes.extend(extract_ordinary_planes(pts, cfg, rng_seed + 29))
    return planes
