"""Dual-return scan, trajectory and ground-truth label I/O.

File formats (UTF-8 text):
  .drs  header ``DRS1 n_rings n_bins``; records ``ring bin layer x y z intensity``
        with layer S (strongest/first) or L (last).
  .tum  ``frame_id tx ty tz qx qy qz qw`` per line (Hamilton quaternion, w last).
  .lbl  header ``LBL1 frame_id n_points``; one integer label per line in
        flattened cloud order (strongest layer first, then last layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ParseError, ShapeError
from .geometry import Pose

LAYER_STRONGEST = "S"
LAYER_LAST = "L"
LAYERS = (LAYER_STRONGEST, LAYER_LAST)

_FLOAT_FMT = "%.12g"  # 12 significant digits


@dataclass(frozen=True)
class Return:
    """One echo: sensor-frame point, range, normalized intensity, grid indices."""

    point: np.ndarray
    range: float
    intensity: float
    ring: int
    azimuth_bin: int

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "point", p)


class _Layer:
    """Dense array storage for one return layer of an organized cloud."""

    __slots__ = ("xyz", "intensity", "ranges", "valid")

    def __init__(self, n_rings: int, n_bins: int):
        self.xyz = np.zeros((n_rings, n_bins, 3))
        self.intensity = np.zeros((n_rings, n_bins))
        self.ranges = np.zeros((n_rings, n_bins))
        self.valid = np.zeros((n_rings, n_bins), dtype=bool)


class OrganizedCloud:
    """Ring x azimuth grid of optional returns, one grid per return layer.

    Flattening order is row-major over (ring, bin), strongest layer first,
    then last layer; label channels use the same order.
    """

    def __init__(self, n_rings: int, n_bins: int):
        if n_rings < 1 or n_bins < 1:
            raise ShapeError("cloud needs at least one ring and one bin")
        self.n_rings = n_rings
        self.n_bins = n_bins
        self.strongest = _Layer(n_rings, n_bins)
        self.last = _Layer(n_rings, n_bins)

    def _layer(self, layer: str) -> _Layer:
        if layer == LAYER_STRONGEST:
            return self.strongest
        if layer == LAYER_LAST:
            return self.last
        raise ShapeError(f"unknown layer {layer!r}")

    def set_return(self, layer: str, ret: Return) -> None:
        """Place a return; collisions keep higher intensity (S) / larger range (L)."""
        if not (0 <= ret.ring < self.n_rings):
            raise ShapeError(f"ring {ret.ring} outside [0, {self.n_rings})")
        if not (0 <= ret.azimuth_bin < self.n_bins):
            raise ShapeError(f"bin {ret.azimuth_bin} outside [0, {self.n_bins})")
        grid = self._layer(layer)
        r, b = ret.ring, ret.azimuth_bin
        if grid.valid[r, b]:
            if layer == LAYER_STRONGEST and ret.intensity <= grid.intensity[r, b]:
                return
            if layer == LAYER_LAST and ret.range <= grid.ranges[r, b]:
                return
        grid.xyz[r, b] = ret.point
        grid.intensity[r, b] = ret.intensity
        grid.ranges[r, b] = ret.range
        grid.valid[r, b] = True

    def get(self, layer: str, ring: int, azimuth_bin: int) -> Optional[Return]:
        grid = self._layer(layer)
        if not grid.valid[ring, azimuth_bin]:
            return None
        return Return(grid.xyz[ring, azimuth_bin].copy(),
                      float(grid.ranges[ring, azimuth_bin]),
                      float(grid.intensity[ring, azimuth_bin]),
                      ring, azimuth_bin)

    def flattened_cells(self) -> List[Tuple[str, int, int]]:
        """(layer, ring, bin) of every populated cell in flattening order."""
        cells = []
        for layer in LAYERS:
            grid = self._layer(layer)
            rings, bins_ = np.nonzero(grid.valid)
            cells.extend((layer, int(r), int(b)) for r, b in zip(rings, bins_))
        return cells

    def layer_points(self, layer: str) -> np.ndarray:
        """(N, 3) sensor-frame points of the populated cells of one layer."""
        grid = self._layer(layer)
        return grid.xyz[grid.valid]

    def n_returns(self) -> int:
        return int(self.strongest.valid.sum() + self.last.valid.sum())

    def ring_elevations(self) -> np.ndarray:
        """Per-ring mean elevation angle (radians); NaN for empty rings."""
        elev = np.full(self.n_rings, np.nan)
        for r in range(self.n_rings):
            zs, rs = [], []
            for grid in (self.strongest, self.last):
                mask = grid.valid[r]
                if np.any(mask):
                    zs.append(grid.xyz[r, mask, 2])
                    rs.append(grid.ranges[r, mask])
            if zs:
                z = np.concatenate(zs)
                rng = np.concatenate(rs)
                ok = rng > 1e-9
                if np.any(ok):
                    elev[r] = float(np.mean(np.arcsin(np.clip(z[ok] / rng[ok], -1, 1))))
        return elev

    def validate(self) -> None:
        """Check the strongest-not-farther-than-last invariant."""
        both = self.strongest.valid & self.last.valid
        if np.any(self.strongest.ranges[both] > self.last.ranges[both] + 1e-6):
            raise ShapeError("strongest return farther than last return")


@dataclass
class Trajectory:
    """World-frame poses keyed by strictly increasing frame ids."""

    entries: List[Tuple[int, Pose]] = field(default_factory=list)

    def __post_init__(self):
        ids = [fid for fid, _ in self.entries]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ParseError("trajectory frame ids must be strictly increasing")
        self._by_id = dict(self.entries)

    def pose(self, frame_id: int) -> Optional[Pose]:
        return self._by_id.get(frame_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[int, Pose]]:
        return iter(self.entries)


@dataclass
class GroundTruthLabels:
    """Per-frame integer labels aligned with flattened cloud order.

    Label set: 0 Normal, 1 Glass, 2 Mirror, 3 OtherRef, 4 Reflection, 5 Obstacle.
    """

    frame_id: int
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.size and (lab.min() < 0 or lab.max() > 5):
            raise ParseError("label outside the declared set {0..5}")
        self.labels = lab


def organize_points(returns_s: Sequence[Return], returns_l: Sequence[Return],
                    n_rings: int, n_bins: int) -> OrganizedCloud:
    """Grid-place strongest and last returns; empty cells stay empty."""
    cloud = OrganizedCloud(n_rings, n_bins)
    for ret in returns_s:
        cloud.set_return(LAYER_STRONGEST, ret)
    for ret in returns_l:
        cloud.set_return(LAYER_LAST, ret)
    cloud.validate()
    return cloud


def load_dual_scan(path) -> OrganizedCloud:
    """Read a .drs scan file into an organized cloud.

    Parsing is vectorized; duplicate (ring, bin, layer) records keep the
    higher intensity (strongest layer) or the larger range (last layer).
    """
    text = Path(path).read_text()
    newline = text.find("\n")
    header = (text[:newline] if newline >= 0 else text).split()
    if len(header) != 3 or header[0] != "DRS1":
        raise ParseError(f"{path}: bad header")
    try:
        n_rings, n_bins = int(header[1]), int(header[2])
    except ValueError as exc:
        raise ParseError(f"{path}: bad header counts") from exc
    cloud = OrganizedCloud(n_rings, n_bins)
    tokens = text[newline + 1:].split() if newline >= 0 else []
    if not tokens:
        return cloud
    if len(tokens) % 7 != 0:
        raise ParseError(f"{path}: record length not a multiple of 7 fields")
    arr = np.array(tokens).reshape(-1, 7)
    try:
        rings = arr[:, 0].astype(np.int64)
        bins_ = arr[:, 1].astype(np.int64)
        xyz = arr[:, 3:6].astype(float)
        intensity = arr[:, 6].astype(float)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed numeric field") from exc
    layers = arr[:, 2]
    if not np.all(np.isin(layers, LAYERS)):
        raise ParseError(f"{path}: layer must be S or L")
    if np.any(rings < 0) or np.any(rings >= n_rings) \
            or np.any(bins_ < 0) or np.any(bins_ >= n_bins):
        raise ShapeError(f"{path}: ring/bin outside the declared grid")
    if np.any(intensity < -1e-9) or np.any(intensity > 1.0 + 1e-9):
        raise ParseError(f"{path}: intensity outside [0, 1]")
    intensity = np.clip(intensity, 0.0, 1.0)
    ranges = np.linalg.norm(xyz, axis=1)

    for layer, sort_key in ((LAYER_STRONGEST, intensity), (LAYER_LAST, ranges)):
        sel = layers == layer
        if not np.any(sel):
            continue
        cell = rings[sel] * n_bins + bins_[sel]
        # ascending sort: on duplicate cells the max-key record writes last
        order = np.lexsort((sort_key[sel], cell))
        r, b = rings[sel][order], bins_[sel][order]
        grid = cloud._layer(layer)
        grid.xyz[r, b] = xyz[sel][order]
        grid.intensity[r, b] = intensity[sel][order]
        grid.ranges[r, b] = ranges[sel][order]
        grid.valid[r, b] = True
    cloud.validate()
    return cloud


def save_dual_scan(cloud: OrganizedCloud, path) -> None:
    lines = [f"DRS1 {cloud.n_rings} {cloud.n_bins}"]
    for layer, ring, bin_ in cloud.flattened_cells():
        grid = cloud._layer(layer)
        x, y, z = grid.xyz[ring, bin_]
        lines.append(f"{ring} {bin_} {layer} "
                     f"{_FLOAT_FMT % x} {_FLOAT_FMT % y} {_FLOAT_FMT % z} "
                     f"{_FLOAT_FMT % grid.intensity[ring, bin_]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> Trajectory:
    """Read a .tum pose file."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"{path}:{lineno}: expected 8 fields")
        try:
            frame_id = int(parts[0])
            tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts[1:])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: malformed field") from exc
        rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        entries.append((frame_id, Pose(rot, np.array([tx, ty, tz]))))
    return Trajectory(entries)


def save_trajectory(trajectory: Trajectory, path) -> None:
    lines = []
    for frame_id, pose in trajectory:
        q = Rotation.from_matrix(pose.rotation).as_quat()
        t = pose.translation
        fields = [str(frame_id)] + [_FLOAT_FMT % v for v in (*t, *q)]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_labels(path) -> GroundTruthLabels:
    """Read a .lbl ground-truth label file."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "LBL1":
        raise ParseError(f"{path}: bad header {lines[0]!r}")
    try:
        frame_id, n_points = int(header[1]), int(header[2])
    except ValueError as exc:
        raise ParseError(f"{path}: bad header counts") from exc
    values = [line.strip() for line in lines[1:] if line.strip()]
    if len(values) != n_points:
        raise ParseError(f"{path}: header says {n_points} labels, file has {len(values)}")
    try:
        labels = np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed label") from exc
    return GroundTruthLabels(frame_id, labels)


def save_labels(labels: GroundTruthLabels, path) -> None:
    lines = [f"LBL1 {labels.frame_id} {labels.labels.size}"]
    lines.extend(str(int(v)) for v in labels.labels)
    Path(path).write_text("\n".join(lines) + "\n")
