"""Core geometric types and primitives: planes, convex boundary hulls, rigid poses,
Householder mirroring, ray casting and RANSAC plane fitting.

Points are plain numpy arrays: shape (3,) for a single point, (N, 3) for batches.
All types are immutable value objects; every operation is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInput, InsufficientPoints

_UNIT_TOL = 1e-9
_SIGN_TOL = 1e-12


class PlaneKind(str, Enum):
    REFLECTIVE = "reflective"
    ORDINARY = "ordinary"
    GROUND = "ground"


@dataclass(frozen=True)
class Plane:
    """Infinite plane n.p + d = 0 with unit normal and d >= 0.

    The constructor normalizes the normal and flips its sign so that d >= 0.
    For d == 0 the sign is fixed by making the first nonzero normal component
    positive, which keeps construction deterministic.
    """

    normal: np.ndarray
    d: float
    kind: PlaneKind = PlaneKind.ORDINARY

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if norm < _SIGN_TOL:
            raise DegenerateInput("plane normal has zero length")
        n = n / norm
        d = float(self.d) / norm
        if d < -_SIGN_TOL:
            n, d = -n, -d
        elif abs(d) <= _SIGN_TOL:
            d = 0.0
            nz = np.nonzero(np.abs(n) > _SIGN_TOL)[0]
            if n[nz[0]] < 0:
                n = -n
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "kind", PlaneKind(self.kind))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.normal + self.d

    def foot_point(self) -> np.ndarray:
        """Point on the plane closest to the origin."""
        return -self.d * self.normal


def plane_basis(plane: Plane) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal in-plane basis (u, v) with u x v = normal."""
    n = plane.normal
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    u = np.cross(axis, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


@dataclass(frozen=True)
class BoundaryHull:
    """Convex polygon bounding the observed extent of a plane.

    Vertices are 2D coordinates in the (basis_u, basis_v) frame anchored at the
    plane's foot point, ordered counter-clockwise.
    """

    plane: Plane
    basis_u: np.ndarray
    basis_v: np.ndarray
    vertices: np.ndarray  # (M, 2)

    def __post_init__(self):
        for name in ("basis_u", "basis_v"):
            vec = np.asarray(getattr(self, name), dtype=float)
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
            raise DegenerateInput("hull needs at least 3 2D vertices")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    @staticmethod
    def from_points(plane: Plane, points: np.ndarray) -> "BoundaryHull":
        """Project 3D points onto the plane and take their convex hull."""
        u, v = plane_basis(plane)
        rel = np.atleast_2d(np.asarray(points, dtype=float)) - plane.foot_point()
        uv = np.column_stack([rel @ u, rel @ v])
        return BoundaryHull(plane, u, v, convex_hull_2d(uv))

    def lift(self, uv: Optional[np.ndarray] = None) -> np.ndarray:
        """Map 2D hull-frame coordinates back to 3D points on the plane."""
        if uv is None:
            uv = self.vertices
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        return (self.plane.foot_point()
                + np.outer(uv[:, 0], self.basis_u)
                + np.outer(uv[:, 1], self.basis_v))

    def area(self) -> float:
        return polygon_area(self.vertices)

    def centroid3(self) -> np.ndarray:
        """Area centroid of the hull, lifted to 3D."""
        return self.lift(polygon_centroid(self.vertices)[None, :])[0]


@dataclass(frozen=True)
class Pose:
    """Rigid transform p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and 3-vector translation")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = pts @ self.rotation.T + self.translation
        return out if np.asarray(points).ndim == 2 else out[0]

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self o other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def to_vec6(self) -> np.ndarray:
        """(x, y, z, rx, ry, rz) with rotation composed as Rz(rz) Ry(ry) Rx(rx)."""
        rx, ry, rz = matrix_to_euler_zyx(self.rotation)
        return np.array([*self.translation, rx, ry, rz])

    @staticmethod
    def from_vec6(vec: np.ndarray) -> "Pose":
        vec = np.asarray(vec, dtype=float)
        return Pose(euler_zyx_matrix(vec[3], vec[4], vec[5]), vec[:3].copy())


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation about x, then y, then z (fixed axes): R = Rz Ry Rx."""
    return rot_z(rz) @ rot_y(ry) @ rot_x(rx)


def matrix_to_euler_zyx(r: np.ndarray) -> Tuple[float, float, float]:
    """Inverse of euler_zyx_matrix; valid for ry in (-pi/2, pi/2)."""
    ry = math.atan2(-r[2, 0], math.hypot(r[0, 0], r[1, 0]))
    rx = math.atan2(r[2, 1], r[2, 2])
    rz = math.atan2(r[1, 0], r[0, 0])
    return rx, ry, rz


def mirror_points(points: np.ndarray, plane: Plane) -> np.ndarray:
    """Householder reflection of points across the plane: m = p - 2(n.p + d) n."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = pts - 2.0 * np.outer(plane.signed_distance(pts), plane.normal)
    return out if np.asarray(points).ndim == 2 else out[0]


def ray_plane_intersection(origin: np.ndarray, direction: np.ndarray,
                           plane: Plane) -> Optional[Tuple[float, np.ndarray]]:
    """Forward intersection of a ray with a plane, or None.

    Returns (t, point) with t = -(n.origin + d) / (n.direction) when the ray is
    not parallel and t > 0.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    denom = float(plane.normal @ direction)
    if abs(denom) < 1e-12:
        return None
    t = -float(plane.normal @ origin + plane.d) / denom
    if t <= 0.0:
        return None
    return t, origin + t * direction


def project_to_hull_frame(hull: BoundaryHull, point: np.ndarray) -> np.ndarray:
    """2D coordinates of a point in a hull's in-plane frame (normal component dropped)."""
    rel = np.asarray(point, dtype=float) - hull.plane.foot_point()
    return np.array([rel @ hull.basis_u, rel @ hull.basis_v])


def point_in_hull(hull: BoundaryHull, point2d: np.ndarray, tol: float = 1e-9) -> bool:
    """Inclusive point-in-convex-polygon test in the hull frame."""
    p = np.asarray(point2d, dtype=float)
    verts = hull.vertices
    nxt = np.roll(verts, -1, axis=0)
    cross = (nxt[:, 0] - verts[:, 0]) * (p[1] - verts[:, 1]) \
        - (nxt[:, 1] - verts[:, 1]) * (p[0] - verts[:, 0])
    return bool(np.all(cross >= -tol))


def points_in_hull(hull: BoundaryHull, points2d: np.ndarray, tol: float = 1e-9,
                   margin: float = 0.0) -> np.ndarray:
    """Vectorized inclusive containment test for (N, 2) points.

    margin (meters) accepts points within that distance outside the hull
    boundary as well.
    """
    pts = np.atleast_2d(np.asarray(points2d, dtype=float))
    verts = hull.vertices
    nxt = np.roll(verts, -1, axis=0)
    ex, ey = nxt[:, 0] - verts[:, 0], nxt[:, 1] - verts[:, 1]
    length = np.hypot(ex, ey)
    cross = ex[None, :] * (pts[:, 1:2] - verts[None, :, 1]) \
        - ey[None, :] * (pts[:, 0:1] - verts[None, :, 0])
    return np.all(cross >= -(tol + margin * length)[None, :], axis=1)


def _extreme_point_filter(pts: np.ndarray) -> np.ndarray:
    """Discard points strictly inside the polygon of 8 directional extremes.

    Cheap prefilter for dense inputs; interior points can never be hull
    vertices, so the hull is unchanged.
    """
    keys = np.column_stack([pts[:, 0], pts[:, 1],
                            pts[:, 0] + pts[:, 1], pts[:, 0] - pts[:, 1]])
    idx = np.unique(np.concatenate([keys.argmin(axis=0), keys.argmax(axis=0)]))
    if idx.size < 3:
        return pts
    poly = pts[idx]
    center = poly.mean(axis=0)
    poly = poly[np.argsort(np.arctan2(poly[:, 1] - center[1],
                                      poly[:, 0] - center[0]))]
    nxt = np.roll(poly, -1, axis=0)
    ex, ey = nxt[:, 0] - poly[:, 0], nxt[:, 1] - poly[:, 1]
    cross = ex[None, :] * (pts[:, 1:2] - poly[None, :, 1]) \
        - ey[None, :] * (pts[:, 0:1] - poly[None, :, 0])
    strictly_inside = np.all(cross > 1e-12, axis=1)
    return pts[~strictly_inside]


def convex_hull_2d(points: Sequence) -> np.ndarray:
    """Convex hull by monotone chain; CCW order, no three collinear output vertices.

    Raises DegenerateInput when fewer than 3 distinct points remain or all
    points are collinear.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 3:
        raise DegenerateInput("convex hull needs at least 3 points")
    if pts.shape[0] > 64:
        pts = _extreme_point_filter(pts)
    pts = np.unique(pts, axis=0)  # sorts lexicographically by (x, y)
    if pts.shape[0] < 3:
        raise DegenerateInput("fewer than 3 distinct points")
    span = float(np.max(np.ptp(pts, axis=0)))
    eps = max(span * span, 1.0) * 1e-12

    def build(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                a, b = chain[-2], chain[-1]
                if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) <= eps:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = build(pts)
    upper = build(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateInput("all points collinear")
    return np.asarray(hull)


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a CCW convex polygon."""
    v = np.asarray(vertices, dtype=float)
    nxt = np.roll(v, -1, axis=0)
    return 0.5 * float(np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    """Area centroid of a convex polygon (vertex mean for degenerate area)."""
    v = np.asarray(vertices, dtype=float)
    nxt = np.roll(v, -1, axis=0)
    cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
    area = 0.5 * float(np.sum(cross))
    if abs(area) < 1e-12:
        return v.mean(axis=0)
    cx = float(np.sum((v[:, 0] + nxt[:, 0]) * cross)) / (6.0 * area)
    cy = float(np.sum((v[:, 1] + nxt[:, 1]) * cross)) / (6.0 * area)
    return np.array([cx, cy])


def clip_convex_polygons(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of one convex CCW polygon against another."""
    output = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clip = np.asarray(clip, dtype=float)
    m = clip.shape[0]
    for i in range(m):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def inside(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) >= -1e-12

        def intersect(p, q):
            dx, dy = q[0] - p[0], q[1] - p[1]
            denom = ex * dy - ey * dx
            if abs(denom) < 1e-15:
                return q
            t = (ex * (a[1] - p[1]) - ey * (a[0] - p[0])) / denom
            return (p[0] + t * dx, p[1] + t * dy)

        result = []
        prev = output[-1]
        for cur in output:
            if inside(cur):
                if not inside(prev):
                    result.append(intersect(prev, cur))
                result.append(cur)
            elif inside(prev):
                result.append(intersect(prev, cur))
            prev = cur
        output = result
    return np.asarray(output, dtype=float).reshape(-1, 2)


def _project_hull_onto(target: BoundaryHull, other: BoundaryHull) -> np.ndarray:
    """2D vertices of `other` projected into `target`'s hull frame."""
    pts = other.lift()
    rel = pts - target.plane.foot_point()
    return np.column_stack([rel @ target.basis_u, rel @ target.basis_v])


def hull_overlap_ratio(a: BoundaryHull, b: BoundaryHull) -> float:
    """Overlap proportion: intersection area / min(area_a, area_b), in [0, 1].

    b's vertices are first projected onto a's plane.
    """
    area_a = a.area()
    area_b = b.area()
    if area_a < 1e-12 or area_b < 1e-12:
        return 0.0
    b_proj = _project_hull_onto(a, b)
    inter = clip_convex_polygons(b_proj, a.vertices)
    if inter.shape[0] < 3:
        return 0.0
    ratio = polygon_area(inter) / min(area_a, area_b)
    return float(min(max(ratio, 0.0), 1.0))


MAX_HULL_VERTICES = 64


def _simplify_hull(vertices: np.ndarray, max_vertices: int) -> np.ndarray:
    """Cap vertex count by farthest-point selection (keeps CCW order)."""
    n = vertices.shape[0]
    if n <= max_vertices:
        return vertices
    chosen = [0]
    dists = np.linalg.norm(vertices - vertices[0], axis=1)
    while len(chosen) < max_vertices:
        idx = int(np.argmax(dists))
        chosen.append(idx)
        dists = np.minimum(dists, np.linalg.norm(vertices - vertices[idx], axis=1))
    return vertices[np.sort(np.array(chosen))]


def merge_hulls(a: BoundaryHull, b: BoundaryHull, target_plane: Plane) -> BoundaryHull:
    """Convex hull of both vertex sets after projecting everything onto target_plane."""
    pts = np.vstack([a.lift(), b.lift()])
    u, v = plane_basis(target_plane)
    rel = pts - target_plane.foot_point()
    uv = np.column_stack([rel @ u, rel @ v])
    hull = _simplify_hull(convex_hull_2d(uv), MAX_HULL_VERTICES)
    return BoundaryHull(target_plane, u, v, hull)


def transform_plane(plane: Plane, pose: Pose) -> Plane:
    """Plane seen after applying the pose to its points: n' = R n, d' = d - n'.t."""
    n = pose.rotation @ plane.normal
    d = plane.d - float(n @ pose.translation)
    return Plane(n, d, plane.kind)


def fit_plane_least_squares(points: np.ndarray) -> Optional[Plane]:
    """Centroid + smallest-eigenvector plane fit; None when rank-deficient."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 3:
        return None
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] < 1e-12:  # second-smallest ~ 0: points are collinear
        return None
    normal = evecs[:, 0]
    return Plane(normal, -float(normal @ centroid))


def fit_plane_ransac(points: np.ndarray, dist_threshold: float, min_inliers: int,
                     max_iters: int, rng_seed: int) -> Optional[Tuple[Plane, np.ndarray]]:
    """RANSAC plane fit refined by least squares over the consensus inliers.

    Returns (plane, inlier_indices) for the best model, or None when the best
    consensus set is smaller than min_inliers. Deterministic for a given seed.

    Raises:
        InsufficientPoints: fewer than 3 input points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts = pts.shape[0]
    if n_pts < 3:
        raise InsufficientPoints(f"need >= 3 points, got {n_pts}")
    rng = np.random.default_rng(rng_seed)

    best_count = 0
    best_normal = None
    best_d = 0.0
    chunk = 128
    done = 0
    while done < max_iters:
        m = min(chunk, max_iters - done)
        idx = rng.integers(0, n_pts, size=(m, 3))
        p0, p1, p2 = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12
        if np.any(valid):
            normals = normals[valid] / norms[valid, None]
            d = -np.einsum("ij,ij->i", normals, p0[valid])
            dist = np.abs(pts @ normals.T + d[None, :])
            counts = np.sum(dist <= dist_threshold, axis=0)
            k = int(np.argmax(counts))
            if counts[k] > best_count:
                best_count = int(counts[k])
                best_normal = normals[k]
                best_d = float(d[k])
        done += m

    if best_normal is None or best_count < 3:
        return None
    inliers = np.nonzero(np.abs(pts @ best_normal + best_d) <= dist_threshold)[0]
    refined = fit_plane_least_squares(pts[inliers])
    if refined is None:
        return None
    inliers = np.nonzero(np.abs(refined.signed_distance(pts)) <= dist_threshold)[0]
    if inliers.size < min_inliers:
        return None
    return refined, inliers
