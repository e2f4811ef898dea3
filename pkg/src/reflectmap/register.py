"""Plane-to-plane registration: matching, closed-form pose, RANSAC mismatch
removal and Gauss-Newton refinement.

The closed-form solution decouples rotation (SVD over the normal covariance)
from translation (least squares on per-plane offset differences). The refined
pose minimizes stacked residuals (R ns - nt; (R ns).t + dt - ds) over the
6-vector (x, y, z, rx, ry, rz) with R = Rz Ry Rx.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .detect import DetectedPlane
from .errors import (DegenerateNormals, NoValidModel, RankDeficient,
                     SingularNormalEquations)
from .geometry import (Plane, PlaneKind, Pose, rot_x, rot_y, rot_z,
                       transform_plane)


@dataclass
class MatchThresholds:
    """Pairwise plane-similarity gates."""

    min_cos: float = 0.8
    max_d_gap: float = 0.1          # meters
    max_centroid_gap: float = 0.5   # meters
    max_area_ratio: float = 1.5


@dataclass
class RegisterConfig:
    inlier_angle_deg: float = 5.0
    inlier_d_gap: float = 0.05
    gn_eps: float = 1e-8
    gn_max_iters: int = 50
    gn_damping: float = 1e-6
    min_span_det: float = 0.1       # |det| of 3 unit normals counting as 3D span


@dataclass(frozen=True)
class PlaneMatch:
    """An accepted source/target plane pairing and its similarity scores.

    area_ratio holds the inter-frame area gate (>= 1); overlap is filled
    instead when matching against the global map, where hull overlap replaces
    the area comparison.
    """

    source_idx: int
    target_idx: int
    cos_angle: float
    d_gap: float
    centroid_gap: float
    area_ratio: float
    overlap: Optional[float] = None


@dataclass
class RegistrationResult:
    pose: Pose
    inlier_matches: List[PlaneMatch]
    iterations: int
    final_residual: float
    converged: bool = True
    refined: bool = True


def match_planes(source: Sequence[DetectedPlane], target: Sequence[DetectedPlane],
                 thresholds: Optional[MatchThresholds] = None) -> List[PlaneMatch]:
    """Exhaustive pairwise matching of same-kind planes.

    A pair is accepted when normal cosine, plane-offset gap, centroid gap and
    area ratio all pass; conflicts are resolved one-to-one by greedy
    best-cosine selection.
    """
    thr = thresholds or MatchThresholds()
    candidates: List[PlaneMatch] = []
    for i, sp in enumerate(source):
        for j, tp in enumerate(target):
            if sp.plane.kind != tp.plane.kind:
                continue
            cos = float(sp.plane.normal @ tp.plane.normal)
            if cos < thr.min_cos:
                continue
            d_gap = abs(sp.plane.d - tp.plane.d)
            if d_gap > thr.max_d_gap:
                continue
            c_gap = float(np.linalg.norm(sp.centroid - tp.centroid))
            if c_gap > thr.max_centroid_gap:
                continue
            areas = sorted((sp.area, tp.area))
            ratio = areas[1] / max(areas[0], 1e-12)
            if ratio > thr.max_area_ratio:
                continue
            candidates.append(PlaneMatch(i, j, cos, d_gap, c_gap, ratio))
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


def rotation_svd(correspondences: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Least-squares rotation mapping source normals onto target normals.

    Builds H = sum ns nt^T, takes H = U S V^T and returns R = V U^T with the
    determinant fixed to +1.

    Raises:
        DegenerateNormals: rank(H) < 2, rotation unconstrained.
    """
    h = np.zeros((3, 3))
    for ns, nt in correspondences:
        h += np.outer(np.asarray(ns, dtype=float), np.asarray(nt, dtype=float))
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-9:
        raise DegenerateNormals("normal correspondences have rank < 2")
    v = vt.T
    r = v @ u.T
    if np.linalg.det(r) < 0:
        v = v.copy()
        v[:, 2] = -v[:, 2]
        r = v @ u.T
    return r


def translation_lsq(correspondences: Sequence[Tuple[np.ndarray, float, float]]
                    ) -> np.ndarray:
    """Least-squares translation from rows nt^T t = ds - dt.

    Raises:
        RankDeficient: target normals span fewer than 3 dimensions.
    """
    a = np.array([np.asarray(nt, dtype=float) for nt, _, _ in correspondences])
    b = np.array([ds - dt for _, ds, dt in correspondences])
    if a.shape[0] < 3 or np.linalg.matrix_rank(a, tol=1e-6) < 3:
        raise RankDeficient("plane normals span fewer than 3 dimensions")
    t, *_ = np.linalg.lstsq(a, b, rcond=None)
    return t


def closed_form_pose(matches: Sequence[PlaneMatch],
                     source: Sequence[DetectedPlane],
                     target: Sequence[DetectedPlane]) -> Pose:
    """Decoupled SVD rotation + least-squares translation over the matches."""
    normal_pairs = [(source[m.source_idx].plane.normal,
                     target[m.target_idx].plane.normal) for m in matches]
    r = rotation_svd(normal_pairs)
    rows = []
    for m in matches:
        sp, tp = source[m.source_idx].plane, target[m.target_idx].plane
        # measure the offset gap against the rotated source normal's target
        rows.append((tp.normal, sp.d, tp.d))
    t = translation_lsq(rows)
    return Pose(r, t)


def _pose_agrees(pose: Pose, sp: Plane, tp: Plane, cfg: RegisterConfig) -> bool:
    moved = transform_plane(sp, pose)
    cos = float(np.clip(moved.normal @ tp.normal, -1.0, 1.0))
    if math.degrees(math.acos(cos)) > cfg.inlier_angle_deg:
        return False
    return abs(moved.d - tp.d) <= cfg.inlier_d_gap


def ransac_match_filter(matches: Sequence[PlaneMatch],
                        source: Sequence[DetectedPlane],
                        target: Sequence[DetectedPlane],
                        cfg: Optional[RegisterConfig] = None,
                        rng_seed: int = 0) -> Tuple[Pose, List[PlaneMatch]]:
    """Remove mismatches by exhaustive 3-combination model search.

    When a ground-ground match exists it is locked into every candidate
    triple. Combinations whose source normals do not span 3D are skipped.
    The triples are enumerated deterministically (rng_seed is accepted for
    interface symmetry but the search is exhaustive). Returns the closed-form
    pose recomputed over the best model's inliers, plus those inliers.

    Raises:
        NoValidModel: no combination spans 3D.
    """
    cfg = cfg or RegisterConfig()
    matches = list(matches)
    if len(matches) < 3:
        raise NoValidModel(f"need >= 3 matches, got {len(matches)}")

    ground = [m for m in matches
              if source[m.source_idx].plane.kind == PlaneKind.GROUND]
    rest = [m for m in matches if m not in ground]
    if ground:
        triples = [(g, a, b) for g in ground
                   for a, b in itertools.combinations(rest, 2)]
    else:
        triples = list(itertools.combinations(matches, 3))

    best: Optional[Tuple[int, List[PlaneMatch]]] = None
    for triple in triples:
        normals = np.array([source[m.source_idx].plane.normal for m in triple])
        if abs(np.linalg.det(normals)) < cfg.min_span_det:
            continue
        try:
            pose = closed_form_pose(triple, source, target)
        except (DegenerateNormals, RankDeficient):
            continue
        inliers = [m for m in matches
                   if _pose_agrees(pose, source[m.source_idx].plane,
                                   target[m.target_idx].plane, cfg)]
        if best is None or len(inliers) > best[0]:
            best = (len(inliers), inliers)
    if best is None:
        raise NoValidModel("no 3-combination of matches spans 3D")
    inliers = best[1]
    pose = closed_form_pose(inliers, source, target)
    return pose, inliers


def _rotation_and_derivatives(rx: float, ry: float, rz: float):
    """R = Rz Ry Rx and its analytic partials w.r.t. each angle."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx, my, mz = rot_x(rx), rot_y(ry), rot_z(rz)
    dx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]])
    dy = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    dz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]])
    r = mz @ my @ mx
    return r, (mz @ my @ dx, mz @ dy @ mx, dz @ my @ mx)


def _residual(vec: np.ndarray, ns: np.ndarray, ds: np.ndarray,
              nt: np.ndarray, dt: np.ndarray) -> np.ndarray:
    r = rot_z(vec[5]) @ rot_y(vec[4]) @ rot_x(vec[3])
    rn = ns @ r.T
    e_n = (rn - nt).ravel()
    e_d = rn @ vec[:3] + dt - ds
    return np.concatenate([e_n, e_d])


def _jacobian(vec: np.ndarray, ns: np.ndarray) -> np.ndarray:
    _, (dr_x, dr_y, dr_z) = _rotation_and_derivatives(vec[3], vec[4], vec[5])
    r = rot_z(vec[5]) @ rot_y(vec[4]) @ rot_x(vec[3])
    m = ns.shape[0]
    jac = np.zeros((4 * m, 6))
    for k, dr in enumerate((dr_x, dr_y, dr_z)):
        dn = ns @ dr.T                      # (m, 3)
        jac[:3 * m, 3 + k] = dn.ravel()
        jac[3 * m:, 3 + k] = dn @ vec[:3]
    jac[3 * m:, 0:3] = ns @ r.T
    return jac


def gauss_newton_refine(inliers: Sequence[PlaneMatch],
                        source: Sequence[DetectedPlane],
                        target: Sequence[DetectedPlane],
                        initial: Pose,
                        cfg: Optional[RegisterConfig] = None) -> RegistrationResult:
    """Iterative pose refinement with analytic Jacobian and step halving.

    Stops when the applied step norm falls below cfg.gn_eps; after
    cfg.gn_max_iters the best iterate is returned flagged non-converged.

    Raises:
        SingularNormalEquations: normal equations singular even after damping.
    """
    cfg = cfg or RegisterConfig()
    inliers = list(inliers)
    ns = np.array([source[m.source_idx].plane.normal for m in inliers])
    ds = np.array([source[m.source_idx].plane.d for m in inliers])
    nt = np.array([target[m.target_idx].plane.normal for m in inliers])
    dt = np.array([target[m.target_idx].plane.d for m in inliers])

    vec = initial.to_vec6()
    err = _residual(vec, ns, ds, nt, dt)
    cost = float(err @ err)
    converged = False
    iterations = 0
    for iterations in range(1, cfg.gn_max_iters + 1):
        jac = _jacobian(vec, ns)
        jtj = jac.T @ jac
        rhs = -jac.T @ err
        try:
            step = np.linalg.solve(jtj, rhs)
        except np.linalg.LinAlgError:
            try:
                step = np.linalg.solve(jtj + cfg.gn_damping * np.eye(6), rhs)
            except np.linalg.LinAlgError as exc:
                raise SingularNormalEquations(
                    "normal equations singular after damping") from exc
        if not np.all(np.isfinite(step)):
            raise SingularNormalEquations("non-finite Gauss-Newton step")

        applied = None
        scale = 1.0
        for _ in range(9):  # full step plus up to 8 halvings
            trial = vec + scale * step
            trial_err = _residual(trial, ns, ds, nt, dt)
            trial_cost = float(trial_err @ trial_err)
            if trial_cost <= cost + 1e-15:
                applied = (trial, trial_err, trial_cost, scale)
                break
            scale *= 0.5
        if applied is None:
            break  # no descent even with tiny steps; keep the best iterate
        vec, err, cost, scale = applied
        if float(np.linalg.norm(scale * step)) <= cfg.gn_eps:
            converged = True
            break

    return RegistrationResult(pose=Pose.from_vec6(vec), inlier_matches=inliers,
                              iterations=iterations, final_residual=cost,
                              converged=converged)


def register_frames(source: Sequence[DetectedPlane],
                    target: Sequence[DetectedPlane],
                    thresholds: Optional[MatchThresholds] = None,
                    cfg: Optional[RegisterConfig] = None,
                    rng_seed: int = 0) -> RegistrationResult:
    """match -> RANSAC filter -> Gauss-Newton; pose maps source frame to target."""
    cfg = cfg or RegisterConfig()
    matches = match_planes(source, target, thresholds)
    pose, inliers = ransac_match_filter(matches, source, target, cfg, rng_seed)
    return gauss_newton_refine(inliers, source, target, pose, cfg)
