"""Deterministic synthetic dual-return LiDAR simulator.

Models three surface behaviors: diffuse walls, mirrors (specular surface echo
near perpendicular incidence plus a reflected continuation) and glass (surface
echo near perpendicular, reflected continuation, transmitted continuation).
Continuations are single-bounce: they register only when they land on a
diffuse surface, at the total path length along the original beam direction.

Intensity model: diffuse echoes decay as albedo * |cos(theta)| / (1 + r^2);
specular surface echoes are range-free, reflectance * exp(-4 (theta/cone)^2),
so near-perpendicular beams on reflective material dominate everything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError
from .geometry import BoundaryHull, Plane, PlaneKind, Pose
from .ingest import (LAYER_LAST, LAYER_STRONGEST, GroundTruthLabels,
                     OrganizedCloud, Trajectory, save_dual_scan, save_labels,
                     save_trajectory)
from .planemap import GlobalPlaneMap, MapPlane, save_map

# ground-truth point labels
LBL_NORMAL = 0
LBL_GLASS = 1
LBL_MIRROR = 2
LBL_OTHERREF = 3
LBL_REFLECTION = 4
LBL_OBSTACLE = 5

MODE_STRONGEST_LAST = "strongest_last"
MODE_FIRST_LAST = "first_last"

_EPS = 1e-9


@dataclass(frozen=True)
class Material:
    kind: str  # diffuse | mirror | glass
    albedo: float = 0.0
    reflectance: float = 0.0
    transmittance: float = 0.0
    cone_deg: float = 15.0

    @staticmethod
    def diffuse(albedo: float) -> "Material":
        return Material("diffuse", albedo=albedo)

    @staticmethod
    def mirror(reflectance: float, cone_deg: float = 15.0) -> "Material":
        return Material("mirror", reflectance=reflectance, cone_deg=cone_deg)

    @staticmethod
    def glass(reflectance: float, transmittance: float,
              cone_deg: float = 15.0) -> "Material":
        return Material("glass", reflectance=reflectance,
                        transmittance=transmittance, cone_deg=cone_deg)


@dataclass(frozen=True)
class Surface:
    """Rectangle: center plus two orthogonal in-plane half-extent vectors."""

    center: np.ndarray
    half_u: np.ndarray
    half_v: np.ndarray
    material: Material

    def __post_init__(self):
        for name in ("center", "half_u", "half_v"):
            vec = np.asarray(getattr(self, name), dtype=float)
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if abs(float(self.half_u @ self.half_v)) > 1e-9 * \
                np.linalg.norm(self.half_u) * np.linalg.norm(self.half_v):
            raise ValueError("half-extent vectors must be orthogonal")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.half_u, self.half_v)
        return n / np.linalg.norm(n)

    def plane(self) -> Plane:
        kind = PlaneKind.ORDINARY
        if self.material.kind in ("mirror", "glass"):
            kind = PlaneKind.REFLECTIVE
        elif abs(self.normal[2]) > 0.99 and self.center[2] <= 0.0:
            kind = PlaneKind.GROUND
        return Plane(self.normal, -float(self.normal @ self.center), kind)

    def corners(self) -> np.ndarray:
        c, u, v = self.center, self.half_u, self.half_v
        return np.array([c - u - v, c + u - v, c + u + v, c - u + v])

    def point_distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to this (bounded) rectangle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.center
        lu = np.linalg.norm(self.half_u)
        lv = np.linalg.norm(self.half_v)
        du = np.clip(rel @ (self.half_u / lu), -lu, lu)
        dv = np.clip(rel @ (self.half_v / lv), -lv, lv)
        closest = self.center + np.outer(du, self.half_u / lu) \
            + np.outer(dv, self.half_v / lv)
        return np.linalg.norm(pts - closest, axis=1)


@dataclass
class Scene:
    surfaces: List[Surface] = field(default_factory=list)

    def truth_map(self) -> GlobalPlaneMap:
        """Ground-truth global plane map built from the scene surfaces."""
        planes = []
        for surf in self.surfaces:
            plane = surf.plane()
            hull = BoundaryHull.from_points(plane, surf.corners())
            planes.append(MapPlane(plane=plane, hull=hull, observations=1,
                                   first_seen=0, last_seen=0))
        return GlobalPlaneMap(planes=planes, frame_count=1)

    def distance_to_surfaces(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dists = np.stack([s.point_distance(pts) for s in self.surfaces])
        return dists.min(axis=0)


@dataclass(frozen=True)
class SensorModel:
    """Ring elevations (degrees, strictly increasing), azimuth bin count, range cap."""

    ring_elevations_deg: np.ndarray
    n_bins: int
    max_range: float = 50.0
    mode: str = MODE_STRONGEST_LAST
    min_intensity: float = 1e-3

    def __post_init__(self):
        elev = np.asarray(self.ring_elevations_deg, dtype=float)
        if np.any(np.diff(elev) <= 0):
            raise ValueError("ring elevations must be strictly increasing")
        if self.n_bins < 8:
            raise ValueError("need at least 8 azimuth bins")
        elev.setflags(write=False)
        object.__setattr__(self, "ring_elevations_deg", elev)

    @property
    def n_rings(self) -> int:
        return int(self.ring_elevations_deg.size)

    def directions(self) -> np.ndarray:
        """(n_rings, n_bins, 3) unit beam directions in the sensor frame."""
        elev = np.radians(self.ring_elevations_deg)
        az = 2.0 * np.pi * np.arange(self.n_bins) / self.n_bins
        dirs = np.empty((self.n_rings, self.n_bins, 3))
        dirs[:, :, 0] = np.cos(elev)[:, None] * np.cos(az)[None, :]
        dirs[:, :, 1] = np.cos(elev)[:, None] * np.sin(az)[None, :]
        dirs[:, :, 2] = np.sin(elev)[:, None]
        return dirs


@dataclass(frozen=True)
class Candidate:
    """One echo candidate of a beam before dual-return selection."""

    range: float
    intensity: float
    label: int


def _diffuse_intensity(albedo, cos_theta, total_range):
    return albedo * np.abs(cos_theta) / (1.0 + total_range * total_range)


def _specular_intensity(reflectance, theta_deg, cone_deg):
    return reflectance * np.exp(-4.0 * (theta_deg / cone_deg) ** 2)


def _batch_hits(origins: np.ndarray, dirs: np.ndarray, scene: Scene,
                max_range) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest rectangle hit for each ray.

    Returns (surface index or -1, hit range, cos of incidence) per ray.
    max_range may be a scalar or a per-ray array.
    """
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_idx = np.full(n, -1, dtype=np.int64)
    best_cos = np.zeros(n)
    max_range = np.broadcast_to(np.asarray(max_range, dtype=float), (n,))
    for idx, surf in enumerate(scene.surfaces):
        nrm = surf.normal
        denom = dirs @ nrm
        ok = np.abs(denom) > _EPS
        t = np.full(n, np.inf)
        t[ok] = ((surf.center - origins[ok]) @ nrm) / denom[ok]
        ok &= (t > 1e-6) & (t <= max_range)
        if not np.any(ok):
            continue
        q = origins[ok] + t[ok, None] * dirs[ok]
        rel = q - surf.center
        lu2 = float(surf.half_u @ surf.half_u)
        lv2 = float(surf.half_v @ surf.half_v)
        inside = (np.abs(rel @ surf.half_u) <= lu2 + 1e-9) \
            & (np.abs(rel @ surf.half_v) <= lv2 + 1e-9)
        sel = np.nonzero(ok)[0][inside]
        closer = t[sel] < best_t[sel]
        sel = sel[closer]
        best_t[sel] = t[sel]
        best_idx[sel] = idx
        best_cos[sel] = -denom[sel]
    return best_idx, best_t, best_cos


def trace_beam(origin: np.ndarray, direction: np.ndarray, scene: Scene,
               max_range: float = 50.0) -> List[Candidate]:
    """Candidate echoes of a single beam, sorted by range.

    Recursion depth is 2: reflected/transmitted continuations register only
    diffuse hits and are dropped if they land on another reflective surface.
    """
    origin = np.atleast_2d(np.asarray(origin, dtype=float))
    direction = np.atleast_2d(np.asarray(direction, dtype=float))
    idx, t, cos_theta = _batch_hits(origin, direction, scene, max_range)
    if idx[0] < 0:
        return []
    surf = scene.surfaces[int(idx[0])]
    mat = surf.material
    t0 = float(t[0])
    c0 = float(cos_theta[0])
    cands: List[Candidate] = []

    if mat.kind == "diffuse":
        return [Candidate(t0, float(_diffuse_intensity(mat.albedo, c0, t0)), LBL_NORMAL)]

    theta_deg = math.degrees(math.acos(min(abs(c0), 1.0)))
    if theta_deg <= mat.cone_deg:
        label = LBL_MIRROR if mat.kind == "mirror" else LBL_GLASS
        cands.append(Candidate(t0, float(_specular_intensity(mat.reflectance,
                                                             theta_deg, mat.cone_deg)),
                               label))

    hit_point = origin + t0 * direction
    nrm = surf.normal
    reflected = direction - 2.0 * (direction @ nrm)[:, None] * nrm
    i2, t2, c2 = _batch_hits(hit_point, reflected, scene, max_range - t0)
    if i2[0] >= 0 and scene.surfaces[int(i2[0])].material.kind == "diffuse":
        total = t0 + float(t2[0])
        albedo = scene.surfaces[int(i2[0])].material.albedo
        cands.append(Candidate(total,
                               mat.reflectance
                               * float(_diffuse_intensity(albedo, c2[0], total)),
                               LBL_REFLECTION))

    if mat.kind == "glass":
        i3, t3, c3 = _batch_hits(hit_point, direction, scene, max_range - t0)
        if i3[0] >= 0 and scene.surfaces[int(i3[0])].material.kind == "diffuse":
            total = t0 + float(t3[0])
            albedo = scene.surfaces[int(i3[0])].material.albedo
            cands.append(Candidate(total,
                                   mat.transmittance ** 2
                                   * float(_diffuse_intensity(albedo, c3[0], total)),
                                   LBL_OBSTACLE))

    return sorted(cands, key=lambda c: c.range)


def select_dual_returns(candidates: Sequence[Candidate], mode: str,
                        min_intensity: float = 1e-3
                        ) -> Tuple[Optional[Candidate], Optional[Candidate]]:
    """Pick the two reported echoes from a beam's candidate list.

    strongest_last: (max intensity, tie -> nearer; max range).
    first_last:     (min range; max range).
    Candidates below min_intensity are dropped first.
    """
    kept = [c for c in candidates if c.intensity >= min_intensity]
    if not kept:
        return None, None
    last = max(kept, key=lambda c: (c.range, c.intensity))
    if mode == MODE_FIRST_LAST:
        first = min(kept, key=lambda c: (c.range, -c.intensity))
        return first, last
    strongest = max(kept, key=lambda c: (c.intensity, -c.range))
    return strongest, last


def _candidate_matrix(scene: Scene, origin: np.ndarray, dirs: np.ndarray,
                      max_range: float):
    """Vectorized trace of many beams; up to 3 candidate slots per beam.

    Slot order: surface echo, reflected continuation, transmitted continuation
    (diffuse hits occupy slot 0). Returns (ranges, intensities, labels, valid),
    each of shape (n_beams, 3). Matches trace_beam semantics.
    """
    n = dirs.shape[0]
    ranges = np.zeros((n, 3))
    intens = np.zeros((n, 3))
    labels = np.full((n, 3), -1, dtype=np.int64)
    valid = np.zeros((n, 3), dtype=bool)

    origins = np.broadcast_to(origin, (n, 3))
    sid, t, cos_t = _batch_hits(origins, dirs, scene, max_range)
    hit = sid >= 0
    if not np.any(hit):
        return ranges, intens, labels, valid

    kinds = np.array([s.material.kind for s in scene.surfaces])
    albedo = np.array([s.material.albedo for s in scene.surfaces])
    reflectance = np.array([s.material.reflectance for s in scene.surfaces])
    transmittance = np.array([s.material.transmittance for s in scene.surfaces])
    cone = np.array([s.material.cone_deg for s in scene.surfaces])
    normals = np.array([s.normal for s in scene.surfaces])

    diff = hit & (kinds[sid] == "diffuse")
    ranges[diff, 0] = t[diff]
    intens[diff, 0] = _diffuse_intensity(albedo[sid[diff]], cos_t[diff], t[diff])
    labels[diff, 0] = LBL_NORMAL
    valid[diff, 0] = True

    refl = np.nonzero(hit & (kinds[sid] != "diffuse"))[0]
    if refl.size == 0:
        return ranges, intens, labels, valid

    r_sid = sid[refl]
    r_t = t[refl]
    r_cos = np.clip(np.abs(cos_t[refl]), 0.0, 1.0)
    theta = np.degrees(np.arccos(r_cos))

    in_cone = theta <= cone[r_sid]
    slot0 = refl[in_cone]
    ranges[slot0, 0] = r_t[in_cone]
    intens[slot0, 0] = _specular_intensity(reflectance[r_sid[in_cone]],
                                           theta[in_cone], cone[r_sid[in_cone]])
    labels[slot0, 0] = np.where(kinds[r_sid[in_cone]] == "mirror",
                                LBL_MIRROR, LBL_GLASS)
    valid[slot0, 0] = True

    hit_pts = origins[refl] + r_t[:, None] * dirs[refl]
    nrm = normals[r_sid]
    reflected = dirs[refl] - 2.0 * np.einsum("ij,ij->i", dirs[refl], nrm)[:, None] * nrm
    i2, t2, c2 = _batch_hits(hit_pts, reflected, scene, max_range - r_t)
    ok2 = (i2 >= 0) & (kinds[np.maximum(i2, 0)] == "diffuse")
    tgt = refl[ok2]
    total2 = r_t[ok2] + t2[ok2]
    ranges[tgt, 1] = total2
    intens[tgt, 1] = reflectance[r_sid[ok2]] \
        * _diffuse_intensity(albedo[i2[ok2]], c2[ok2], total2)
    labels[tgt, 1] = LBL_REFLECTION
    valid[tgt, 1] = True

    glass = kinds[r_sid] == "glass"
    if np.any(glass):
        i3, t3, c3 = _batch_hits(hit_pts[glass], dirs[refl[glass]], scene,
                                 max_range - r_t[glass])
        ok3 = (i3 >= 0) & (kinds[np.maximum(i3, 0)] == "diffuse")
        tgt = refl[glass][ok3]
        total3 = r_t[glass][ok3] + t3[ok3]
        ranges[tgt, 2] = total3
        intens[tgt, 2] = transmittance[r_sid[glass][ok3]] ** 2 \
            * _diffuse_intensity(albedo[i3[ok3]], c3[ok3], total3)
        labels[tgt, 2] = LBL_OBSTACLE
        valid[tgt, 2] = True

    return ranges, intens, labels, valid


def render_scan(scene: Scene, sensor: SensorModel, pose: Pose,
                rng_seed: int = 0, noise_sigma: float = 0.0
                ) -> Tuple[OrganizedCloud, GroundTruthLabels]:
    """Trace every ring x bin beam from the given pose.

    Range noise is drawn per candidate echo before dual-return selection, so a
    candidate reported in both layers carries the same perturbed range and the
    last return stays the farthest by construction.
    """
    rng = np.random.default_rng(rng_seed)
    dirs_sensor = sensor.directions().reshape(-1, 3)
    n = dirs_sensor.shape[0]
    dirs_world = dirs_sensor @ pose.rotation.T
    ranges, intens, labels, valid = _candidate_matrix(
        scene, pose.translation, dirs_world, sensor.max_range)

    if noise_sigma > 0.0:
        noise = rng.normal(0.0, noise_sigma, size=(n, 3))
        ranges = np.where(valid, np.maximum(ranges + noise, 1e-3), ranges)

    valid &= intens >= sensor.min_intensity
    neg_r = np.where(valid, -ranges, -np.inf)
    pos_r = np.where(valid, ranges, -np.inf)
    pos_i = np.where(valid, intens, -np.inf)

    # exact lexicographic argmax per beam: best primary, then best secondary
    def _argmax(primary, secondary):
        best = primary.max(axis=1, keepdims=True)
        tie = primary == best
        return np.argmax(np.where(tie, secondary, -np.inf), axis=1)

    last_slot = _argmax(pos_r, pos_i)
    if sensor.mode == MODE_FIRST_LAST:
        first_slot = _argmax(neg_r, pos_i)
    else:
        first_slot = _argmax(pos_i, neg_r)
    any_valid = valid.any(axis=1)

    cloud = OrganizedCloud(sensor.n_rings, sensor.n_bins)
    shape = (sensor.n_rings, sensor.n_bins)
    rows = np.arange(n)
    label_grids = {}
    for layer, slot in ((LAYER_STRONGEST, first_slot), (LAYER_LAST, last_slot)):
        grid = cloud._layer(layer)
        r_sel = ranges[rows, slot]
        i_sel = intens[rows, slot]
        l_sel = labels[rows, slot]
        ok = any_valid & valid[rows, slot]
        grid.valid = ok.reshape(shape)
        grid.ranges = np.where(ok, r_sel, 0.0).reshape(shape)
        grid.intensity = np.clip(np.where(ok, i_sel, 0.0), 0.0, 1.0).reshape(shape)
        grid.xyz = (dirs_sensor * np.where(ok, r_sel, 0.0)[:, None]).reshape(
            sensor.n_rings, sensor.n_bins, 3)
        label_grids[layer] = np.where(ok, l_sel, -1).reshape(shape)

    flat = np.concatenate([label_grids[LAYER_STRONGEST][cloud.strongest.valid],
                           label_grids[LAYER_LAST][cloud.last.valid]])
    cloud.validate()
    return cloud, GroundTruthLabels(0, flat)


def render_sequence(scene: Scene, sensor: SensorModel, trajectory: Trajectory,
                    out_dir, rng_seed: int = 0, noise_sigma: float = 0.0) -> None:
    """Render scans for every trajectory pose and write the dataset to disk.

    Emits scan_%06d.drs, labels_%06d.lbl, poses.tum and truth.gpm.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for frame_id, pose in trajectory:
        cloud, labels = render_scan(scene, sensor, pose,
                                    rng_seed=(rng_seed * 1_000_003 + frame_id),
                                    noise_sigma=noise_sigma)
        save_dual_scan(cloud, out / f"scan_{frame_id:06d}.drs")
        labels.frame_id = frame_id
        save_labels(labels, out / f"labels_{frame_id:06d}.lbl")
    save_trajectory(trajectory, out / "poses.tum")
    save_map(scene.truth_map(), out / "truth.gpm")


def load_scene(path) -> Scene:
    """Read a .scn scene file: one surface per line,
    ``material cx cy cz ux uy uz vx vy vz params...``."""
    surfaces = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: malformed number") from exc
        if len(vals) < 10:
            raise ParseError(f"{path}:{lineno}: too few fields")
        center, hu, hv = np.array(vals[0:3]), np.array(vals[3:6]), np.array(vals[6:9])
        params = vals[9:]
        if kind == "diffuse":
            mat = Material.diffuse(params[0])
        elif kind == "mirror":
            mat = Material.mirror(params[0], params[1] if len(params) > 1 else 15.0)
        elif kind == "glass":
            if len(params) < 2:
                raise ParseError(f"{path}:{lineno}: glass needs reflectance and transmittance")
            mat = Material.glass(params[0], params[1],
                                 params[2] if len(params) > 2 else 15.0)
        else:
            raise ParseError(f"{path}:{lineno}: unknown material {kind!r}")
        surfaces.append(Surface(center, hu, hv, mat))
    return Scene(surfaces)


def save_scene(scene: Scene, path) -> None:
    lines = []
    for surf in scene.surfaces:
        base = " ".join("%.12g" % v for v in
                        (*surf.center, *surf.half_u, *surf.half_v))
        mat = surf.material
        if mat.kind == "diffuse":
            lines.append(f"diffuse {base} {mat.albedo:.12g}")
        elif mat.kind == "mirror":
            lines.append(f"mirror {base} {mat.reflectance:.12g} {mat.cone_deg:.12g}")
        else:
            lines.append(f"glass {base} {mat.reflectance:.12g} "
                         f"{mat.transmittance:.12g} {mat.cone_deg:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")
