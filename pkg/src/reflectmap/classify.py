"""Per-point classification against the global reflective plane map.

Every return is ray-cast from the sensor origin against the reflective map
planes (hull-gated, nearest hit wins) and compared to the intersection range:
in front -> Normal, within the surface band -> Surface, behind -> resolved by
the mirroring procedure below into Reflection / Obstacle / Unclassified.

Behind-point resolution, per frame:
  1. mirror the indoor (Normal) points across the plane; a behind point
     farther than every mirrored point in its angular cell is an Obstacle;
  2. mirror each remaining behind point inside; if the cloud holds a return
     beyond the mirrored position in that direction the mirror image is
     invalid -> Obstacle;
  3. a remaining behind point with a farther same-direction return already
     labeled Obstacle -> Reflection;
  4. the rest are mirrored inside and matched to nearby Normal points;
     found -> Reflection, otherwise Unclassified (removed downstream).

Labeled cloud file (.lbc, text): header ``LBC1 frame_id n``; per line
``ring bin layer x y z label`` with world-frame coordinates and labels
0 Normal, 1 Surface, 2 Reflection, 3 Obstacle, 4 Unclassified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError
from .geometry import Pose, mirror_points, points_in_hull
from .ingest import LAYER_LAST, LAYER_STRONGEST, LAYERS, OrganizedCloud
from .planemap import GlobalPlaneMap


class PointLabel(IntEnum):
    NORMAL = 0
    SURFACE = 1
    REFLECTION = 2
    OBSTACLE = 3
    UNCLASSIFIED = 4


# partition codes
P_NOINTERSECT = 0
P_FRONT = 1
P_ONPLANE = 2
P_BEHIND = 3


@dataclass
class ClassifyConfig:
    band: float = 0.08        # on-surface band around the intersection range
    hull_margin: float = 0.08  # lateral slack when ray-gating against hulls
    r_nn: float = 0.3         # neighbor radius for the final Reflection test
    bin_window: int = 1       # +- azimuth bins for same-direction comparisons
    ring_tol_factor: float = 0.75  # fraction of ring spacing for ring lookup


@dataclass
class _FlatReturns:
    """Both layers of a cloud flattened into parallel arrays."""

    layer: np.ndarray     # 0 strongest, 1 last
    ring: np.ndarray
    bin: np.ndarray
    world: np.ndarray     # (N, 3)
    ranges: np.ndarray


@dataclass
class Partition:
    """Per-return relationship with the nearest intersected reflective plane."""

    code: np.ndarray      # P_* codes
    plane_id: np.ndarray  # index into the map's reflective plane list, -1 none
    t_hit: np.ndarray     # intersection range, inf when none


@dataclass
class LabeledCloud:
    """Classification output: per-return labels aligned with the cloud."""

    cloud: OrganizedCloud
    pose: Pose
    labels: np.ndarray      # per flattened return, PointLabel values
    plane_ids: np.ndarray   # assigned reflective plane per return, -1 none
    flat: _FlatReturns

    def label_counts(self) -> Dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def _flatten(cloud: OrganizedCloud, pose: Pose) -> _FlatReturns:
    layers, rings, bins_, pts, rngs = [], [], [], [], []
    for li, layer in enumerate(LAYERS):
        grid = cloud._layer(layer)
        r, b = np.nonzero(grid.valid)
        layers.append(np.full(r.size, li, dtype=np.int64))
        rings.append(r)
        bins_.append(b)
        pts.append(grid.xyz[r, b])
        rngs.append(grid.ranges[r, b])
    world = pose.apply(np.vstack(pts)) if pts else np.zeros((0, 3))
    return _FlatReturns(layer=np.concatenate(layers), ring=np.concatenate(rings),
                        bin=np.concatenate(bins_), world=world,
                        ranges=np.concatenate(rngs))


def partition_by_planes(cloud: OrganizedCloud, pose: Pose, gmap: GlobalPlaneMap,
                        cfg: Optional[ClassifyConfig] = None) -> Partition:
    """Cast each return's beam against the reflective map planes.

    Nearest hull-gated intersection wins; returns with no intersection keep
    code P_NOINTERSECT.
    """
    cfg = cfg or ClassifyConfig()
    flat = _flatten(cloud, pose)
    n = flat.ranges.size
    origin = pose.translation
    code = np.full(n, P_NOINTERSECT, dtype=np.int64)
    plane_id = np.full(n, -1, dtype=np.int64)
    t_best = np.full(n, np.inf)
    if n == 0:
        return Partition(code, plane_id, t_best)

    rel = flat.world - origin
    dirs = rel / np.maximum(np.linalg.norm(rel, axis=1), 1e-12)[:, None]

    for k, mp in enumerate(gmap.reflective()):
        plane = mp.plane
        denom = dirs @ plane.normal
        ok = np.abs(denom) > 1e-12
        t = np.full(n, np.inf)
        t[ok] = -(origin @ plane.normal + plane.d) / denom[ok]
        ok &= t > 0.0
        if not np.any(ok):
            continue
        hits = origin + t[ok, None] * dirs[ok]
        rel_h = hits - plane.foot_point()
        uv = np.column_stack([rel_h @ mp.hull.basis_u, rel_h @ mp.hull.basis_v])
        inside = points_in_hull(mp.hull, uv, margin=cfg.hull_margin)
        sel = np.nonzero(ok)[0][inside]
        closer = t[sel] < t_best[sel]
        sel = sel[closer]
        t_best[sel] = t[sel]
        plane_id[sel] = k

    hit = plane_id >= 0
    r = flat.ranges
    code[hit & (r < t_best - cfg.band)] = P_FRONT
    code[hit & (np.abs(r - t_best) <= cfg.band)] = P_ONPLANE
    code[hit & (r > t_best + cfg.band)] = P_BEHIND
    return Partition(code, plane_id, t_best)


def _cell_of_points(points: np.ndarray, pose: Pose, ring_elev: np.ndarray,
                    n_bins: int, cfg: ClassifyConfig
                    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Map world points to (ring, bin, range) cells of the sensor grid.

    Rings are matched by nearest elevation among populated rings; points whose
    elevation falls outside the ring pattern are flagged invalid.
    """
    rel = (points - pose.translation) @ pose.rotation  # into the sensor frame
    rng = np.linalg.norm(rel, axis=1)
    ok = rng > 1e-9
    elev = np.zeros(points.shape[0])
    elev[ok] = np.arcsin(np.clip(rel[ok, 2] / rng[ok], -1.0, 1.0))
    az = np.arctan2(rel[:, 1], rel[:, 0]) % (2.0 * np.pi)
    bins_ = np.rint(az / (2.0 * np.pi / n_bins)).astype(np.int64) % n_bins

    valid_rings = np.nonzero(~np.isnan(ring_elev))[0]
    if valid_rings.size == 0:
        return np.zeros_like(bins_), bins_, rng, np.zeros_like(ok)
    elevs = ring_elev[valid_rings]
    order = np.argsort(elevs)
    sorted_elev = elevs[order]
    pos = np.searchsorted(sorted_elev, elev)
    pos = np.clip(pos, 1, sorted_elev.size - 1) if sorted_elev.size > 1 \
        else np.zeros_like(pos)
    lo = np.clip(pos - 1, 0, sorted_elev.size - 1)
    hi = np.clip(pos, 0, sorted_elev.size - 1)
    pick_hi = np.abs(sorted_elev[hi] - elev) < np.abs(sorted_elev[lo] - elev)
    nearest = np.where(pick_hi, hi, lo)
    rings = valid_rings[order[nearest]]
    spacing = np.max(np.diff(sorted_elev)) if sorted_elev.size > 1 else np.inf
    ok &= np.abs(sorted_elev[nearest] - elev) <= spacing * cfg.ring_tol_factor
    return rings, bins_, rng, ok


def _window_max(grid: np.ndarray, window: int) -> np.ndarray:
    """Per-cell max over +-window azimuth bins (wrap-around)."""
    out = grid.copy()
    for s in range(1, window + 1):
        out = np.maximum(out, np.roll(grid, s, axis=1))
        out = np.maximum(out, np.roll(grid, -s, axis=1))
    return out


def _window_min(grid: np.ndarray, window: int) -> np.ndarray:
    """Per-cell min over +-window azimuth bins (wrap-around)."""
    out = grid.copy()
    for s in range(1, window + 1):
        out = np.minimum(out, np.roll(grid, s, axis=1))
        out = np.minimum(out, np.roll(grid, -s, axis=1))
    return out


def _max_grid(shape, rings, bins_, values) -> np.ndarray:
    grid = np.full(shape, -np.inf)
    np.maximum.at(grid, (rings, bins_), values)
    return grid


def resolve_behind(cloud: OrganizedCloud, pose: Pose, gmap: GlobalPlaneMap,
                   part: Partition, cfg: Optional[ClassifyConfig] = None
                   ) -> np.ndarray:
    """Labels for every flattened return given a partition (see module doc)."""
    cfg = cfg or ClassifyConfig()
    flat = _flatten(cloud, pose)
    n = flat.ranges.size
    labels = np.full(n, int(PointLabel.UNCLASSIFIED), dtype=np.int64)
    labels[(part.code == P_NOINTERSECT) | (part.code == P_FRONT)] = PointLabel.NORMAL
    labels[part.code == P_ONPLANE] = PointLabel.SURFACE
    behind = part.code == P_BEHIND
    if not np.any(behind):
        return labels

    shape = (cloud.n_rings, cloud.n_bins)
    ring_elev = cloud.ring_elevations()
    reflective = gmap.reflective()
    pending = behind.copy()

    normal_world = flat.world[labels == PointLabel.NORMAL]

    # step 1: behind points beyond every mirrored indoor point in their cell
    for k, mp in enumerate(reflective):
        sel = pending & (part.plane_id == k)
        if not np.any(sel) or normal_world.shape[0] == 0:
            continue
        mirrored = mirror_points(normal_world, mp.plane)
        m_ring, m_bin, m_rng, m_ok = _cell_of_points(mirrored, pose, ring_elev,
                                                     cloud.n_bins, cfg)
        if not np.any(m_ok):
            continue
        wmax = _window_max(_max_grid(shape, m_ring[m_ok], m_bin[m_ok],
                                     m_rng[m_ok]), cfg.bin_window)
        bound = wmax[flat.ring[sel], flat.bin[sel]]
        farther = np.isfinite(bound) & (flat.ranges[sel] > bound + cfg.band)
        idx = np.nonzero(sel)[0][farther]
        labels[idx] = PointLabel.OBSTACLE
        pending[idx] = False

    # per-cell direct return range (max over layers), then min over the
    # azimuth window: the mirrored position is invalid only when every nearby
    # direction saw past it, which is robust to range gradients at grazing
    # incidence
    cell_rng = np.full(shape, -np.inf)
    for layer in LAYERS:
        grid = cloud._layer(layer)
        cell_rng = np.maximum(cell_rng, np.where(grid.valid, grid.ranges, -np.inf))
    cell_rng[np.isneginf(cell_rng)] = np.inf  # empty cells never contradict
    cell_floor = _window_min(cell_rng, cfg.bin_window)

    # step 2: mirrored position contradicted by farther direct returns
    for k, mp in enumerate(reflective):
        sel = pending & (part.plane_id == k)
        if not np.any(sel):
            continue
        mirrored = mirror_points(flat.world[sel], mp.plane)
        m_ring, m_bin, m_rng, m_ok = _cell_of_points(mirrored, pose, ring_elev,
                                                     cloud.n_bins, cfg)
        bound = np.full(m_rng.size, np.inf)
        bound[m_ok] = cell_floor[m_ring[m_ok], m_bin[m_ok]]
        invalid = np.isfinite(bound) & (bound > m_rng + cfg.band)
        idx = np.nonzero(sel)[0][invalid]
        labels[idx] = PointLabel.OBSTACLE
        pending[idx] = False

    # step 3: farther same-direction return already labeled Obstacle
    obstacle = labels == PointLabel.OBSTACLE
    if np.any(obstacle) and np.any(pending):
        omax = _window_max(_max_grid(shape, flat.ring[obstacle],
                                     flat.bin[obstacle], flat.ranges[obstacle]),
                           cfg.bin_window)
        sel = np.nonzero(pending)[0]
        bound = omax[flat.ring[sel], flat.bin[sel]]
        hit = np.isfinite(bound) & (bound > flat.ranges[sel] + cfg.band)
        labels[sel[hit]] = PointLabel.REFLECTION
        pending[sel[hit]] = False

    # step 4: mirrored position near classified indoor points
    if np.any(pending):
        normal_world = flat.world[labels == PointLabel.NORMAL]
        sel = np.nonzero(pending)[0]
        if normal_world.shape[0] > 0:
            tree = cKDTree(normal_world)
            for k, mp in enumerate(reflective):
                ksel = sel[part.plane_id[sel] == k]
                if ksel.size == 0:
                    continue
                mirrored = mirror_points(flat.world[ksel], mp.plane)
                dist, _ = tree.query(mirrored, k=1,
                                     distance_upper_bound=cfg.r_nn)
                found = np.isfinite(dist)
                labels[ksel[found]] = PointLabel.REFLECTION
                pending[ksel[found]] = False
    # anything still pending stays UNCLASSIFIED
    return labels


def classify_cloud(cloud: OrganizedCloud, pose: Pose, gmap: GlobalPlaneMap,
                   cfg: Optional[ClassifyConfig] = None) -> LabeledCloud:
    """Partition + behind-point resolution for one frame."""
    cfg = cfg or ClassifyConfig()
    part = partition_by_planes(cloud, pose, gmap, cfg)
    labels = resolve_behind(cloud, pose, gmap, part, cfg)
    return LabeledCloud(cloud=cloud, pose=pose, labels=labels,
                        plane_ids=part.plane_id, flat=_flatten(cloud, pose))


def mirror_back(labeled: LabeledCloud, gmap: GlobalPlaneMap) -> np.ndarray:
    """World positions of Reflection points mirrored across their plane."""
    reflective = gmap.reflective()
    sel = labeled.labels == PointLabel.REFLECTION
    out = []
    for k, mp in enumerate(reflective):
        ksel = sel & (labeled.plane_ids == k)
        if np.any(ksel):
            out.append(mirror_points(labeled.flat.world[ksel], mp.plane))
    return np.vstack(out) if out else np.zeros((0, 3))


def filtered_cloud(labeled: LabeledCloud, mode: str = "full") -> OrganizedCloud:
    """Drop Reflection and Unclassified returns; indoor mode drops Obstacle too."""
    if mode not in ("full", "indoor"):
        raise ValueError("mode must be 'full' or 'indoor'")
    drop = [int(PointLabel.REFLECTION), int(PointLabel.UNCLASSIFIED)]
    if mode == "indoor":
        drop.append(int(PointLabel.OBSTACLE))
    out = OrganizedCloud(labeled.cloud.n_rings, labeled.cloud.n_bins)
    flat = labeled.flat
    keep = ~np.isin(labeled.labels, drop)
    for li, layer in enumerate(LAYERS):
        sel = (flat.layer == li) & keep
        src = labeled.cloud._layer(layer)
        dst = out._layer(layer)
        r, b = flat.ring[sel], flat.bin[sel]
        dst.xyz[r, b] = src.xyz[r, b]
        dst.ranges[r, b] = src.ranges[r, b]
        dst.intensity[r, b] = src.intensity[r, b]
        dst.valid[r, b] = True
    return out


_FMT = "%.12g"


def save_labeled(labeled: LabeledCloud, frame_id: int, path) -> None:
    flat = labeled.flat
    lines = [f"LBC1 {frame_id} {flat.ranges.size}"]
    world = flat.world.tolist()
    for ring, bin_, layer, (x, y, z), label in zip(
            flat.ring.tolist(), flat.bin.tolist(), flat.layer.tolist(),
            world, labeled.labels.tolist()):
        lines.append(f"{ring} {bin_} {LAYERS[layer]} "
                     f"{_FMT % x} {_FMT % y} {_FMT % z} {label}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_labeled(path) -> Tuple[int, np.ndarray, np.ndarray]:
    """Read a .lbc file: (frame_id, world points (N, 3), labels (N,))."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "LBC1":
        raise ParseError(f"{path}: bad header {lines[0]!r}")
    frame_id, n = int(header[1]), int(header[2])
    pts, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(f"{path}:{lineno}: expected 7 fields")
        pts.append([float(parts[3]), float(parts[4]), float(parts[5])])
        labels.append(int(parts[6]))
    if len(labels) != n:
        raise ParseError(f"{path}: header count mismatch")
    return frame_id, np.asarray(pts, dtype=float), np.asarray(labels, dtype=np.int64)
