"""Scripted demo scenes and trajectories.

Three fixtures:
  box-room       closed 6 x 6 x 3 m diffuse room (no reflective surfaces),
                 used for plane-map SLAM;
  mirror-room    the same room with a wall mirror and a free-standing
                 partition that occludes part of the far wall, so a slice of
                 the mirror's reflections images geometry the sensor cannot
                 see directly;
  glass-corridor two long parallel walls plus floor and ceiling (normals
                 spanning only two directions), a glass panel embedded in one
                 wall and an outdoor wall one meter behind it.
"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from .geometry import Pose, rot_z
from .ingest import Trajectory
from .sim import (MODE_STRONGEST_LAST, Material, Scene, SensorModel, Surface)

_FLOOR_Z = -1.2
_CEIL_Z = 1.8


def _wall_x(x: float, y0: float, y1: float, z0: float = _FLOOR_Z,
            z1: float = _CEIL_Z, material: Material = None) -> Surface:
    material = material or Material.diffuse(0.6)
    c = np.array([x, (y0 + y1) / 2, (z0 + z1) / 2])
    return Surface(c, np.array([0.0, (y1 - y0) / 2, 0.0]),
                   np.array([0.0, 0.0, (z1 - z0) / 2]), material)


def _wall_y(y: float, x0: float, x1: float, z0: float = _FLOOR_Z,
            z1: float = _CEIL_Z, material: Material = None) -> Surface:
    material = material or Material.diffuse(0.6)
    c = np.array([(x0 + x1) / 2, y, (z0 + z1) / 2])
    return Surface(c, np.array([(x1 - x0) / 2, 0.0, 0.0]),
                   np.array([0.0, 0.0, (z1 - z0) / 2]), material)


def _slab_z(z: float, x0: float, x1: float, y0: float, y1: float,
            material: Material = None) -> Surface:
    material = material or Material.diffuse(0.5)
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2, z])
    return Surface(c, np.array([(x1 - x0) / 2, 0.0, 0.0]),
                   np.array([0.0, (y1 - y0) / 2, 0.0]), material)


def sensor_coarse() -> SensorModel:
    """33 rings over +-40 deg (wide vertical FOV, elevation 0 included),
    1 deg azimuth bins."""
    return SensorModel(np.linspace(-40.0, 40.0, 33), 360, max_range=40.0,
                       mode=MODE_STRONGEST_LAST)


def sensor_fine() -> SensorModel:
    """32 rings over +-45 deg, 0.5 deg azimuth bins.

    The wide vertical FOV keeps surfaces reached by mirror reflections inside
    the directly observed region as well.
    """
    return SensorModel(np.linspace(-45.0, 45.0, 32), 720, max_range=40.0,
                       mode=MODE_STRONGEST_LAST)


def make_box_room() -> Scene:
    return Scene([
        _wall_x(-3.0, -3.0, 3.0),
        _wall_x(3.0, -3.0, 3.0),
        _wall_y(-3.0, -3.0, 3.0),
        _wall_y(3.0, -3.0, 3.0),
        _slab_z(_FLOOR_Z, -3.0, 3.0, -3.0, 3.0, Material.diffuse(0.5)),
        _slab_z(_CEIL_Z, -3.0, 3.0, -3.0, 3.0, Material.diffuse(0.7)),
    ])


def box_room_trajectory(n_frames: int = 200) -> Trajectory:
    """Circle of radius 1.5 m starting at the origin, with slow yaw.

    The per-frame step is fixed (the 200-frame sequence covers a half
    circle), so shorter sequences traverse a prefix of the same path and
    consecutive frames stay within the plane-matching gates.
    """
    entries = []
    for k in range(n_frames):
        phi = math.pi * k / 199.0
        pos = np.array([1.5 * (math.cos(phi) - 1.0), 1.5 * math.sin(phi), 0.0])
        entries.append((k, Pose(rot_z(0.5 * phi), pos)))
    return Trajectory(entries)


MIRROR_X0, MIRROR_X1 = -2.3, -0.7
MIRROR_Z0, MIRROR_Z1 = -0.4, 0.4


def make_mirror_room() -> Scene:
    """Box room with a mirror set into the y = +3 wall and a full-width
    partition at y = -1.

    The partition hides everything at y < -1 from the sensor; the mirror's
    reflections land on the partition's hidden back face, so every reflected
    return images a surface the beams cannot reach directly.
    """
    surfaces = [
        _wall_x(-3.0, -3.0, 3.0),
        _wall_x(3.0, -3.0, 3.0),
        _wall_y(-3.0, -3.0, 3.0),
        # y = +3 wall split around the mirror opening
        _wall_y(3.0, -3.0, MIRROR_X0),
        _wall_y(3.0, MIRROR_X1, 3.0),
        _wall_y(3.0, MIRROR_X0, MIRROR_X1, _FLOOR_Z, MIRROR_Z0),
        _wall_y(3.0, MIRROR_X0, MIRROR_X1, MIRROR_Z1, _CEIL_Z),
        Surface(np.array([(MIRROR_X0 + MIRROR_X1) / 2, 3.0,
                          (MIRROR_Z0 + MIRROR_Z1) / 2]),
                np.array([(MIRROR_X1 - MIRROR_X0) / 2, 0.0, 0.0]),
                np.array([0.0, 0.0, (MIRROR_Z1 - MIRROR_Z0) / 2]),
                Material.mirror(0.95)),
        # free-standing partition (both faces diffuse)
        _wall_y(-1.0, -3.0, 3.0),
        _slab_z(_FLOOR_Z, -3.0, 3.0, -3.0, 3.0, Material.diffuse(0.5)),
        _slab_z(_CEIL_Z, -3.0, 3.0, -3.0, 3.0, Material.diffuse(0.7)),
    ]
    return Scene(surfaces)


def mirror_room_trajectory(n_frames: int = 50) -> Trajectory:
    """Sweep parallel to the mirror wall so the perpendicular footprint
    crosses the full mirror width."""
    entries = []
    for k in range(n_frames):
        s = k / max(n_frames - 1, 1)
        pos = np.array([-2.4 + 1.8 * s, 0.4 + 0.1 * math.sin(2 * math.pi * s), 0.0])
        entries.append((k, Pose(np.eye(3), pos)))
    return Trajectory(entries)


GLASS_Y0, GLASS_Y1 = -0.6, 0.6
GLASS_Z0, GLASS_Z1 = -0.28, 0.28


def make_glass_corridor() -> Scene:
    """Corridor along y with a glass panel in the x = +1.5 wall and an
    outdoor wall one meter behind it.

    Wall normals span only the x and z directions, so pose estimation lacks
    the along-corridor degree of freedom.
    """
    surfaces = [
        _wall_x(-1.5, -20.0, 20.0),
        # x = +1.5 wall split around the glass panel
        _wall_x(1.5, -20.0, GLASS_Y0),
        _wall_x(1.5, GLASS_Y1, 20.0),
        _wall_x(1.5, GLASS_Y0, GLASS_Y1, _FLOOR_Z, GLASS_Z0),
        _wall_x(1.5, GLASS_Y0, GLASS_Y1, GLASS_Z1, _CEIL_Z),
        Surface(np.array([1.5, (GLASS_Y0 + GLASS_Y1) / 2,
                          (GLASS_Z0 + GLASS_Z1) / 2]),
                np.array([0.0, (GLASS_Y1 - GLASS_Y0) / 2, 0.0]),
                np.array([0.0, 0.0, (GLASS_Z1 - GLASS_Z0) / 2]),
                Material.glass(0.4, 0.5)),
        _wall_x(2.5, -1.4, 1.4, -0.5, 0.5),   # outdoor wall behind the glass
        _slab_z(_FLOOR_Z, -1.5, 1.5, -20.0, 20.0, Material.diffuse(0.5)),
        _slab_z(_CEIL_Z, -1.5, 1.5, -20.0, 20.0, Material.diffuse(0.7)),
    ]
    return Scene(surfaces)


def corridor_trajectory(n_frames: int = 50) -> Trajectory:
    """Slow oscillation along the corridor axis in front of the glass panel,
    so the perpendicular footprint sweeps the whole panel while staying
    centered on it."""
    entries = []
    for k in range(n_frames):
        pos = np.array([0.0, 0.35 * math.sin(4.0 * math.pi * k / 49.0), 0.0])
        entries.append((k, Pose(np.eye(3), pos)))
    return Trajectory(entries)


SCENES = {
    "box-room": (make_box_room, box_room_trajectory, sensor_coarse),
    "mirror-room": (make_mirror_room, mirror_room_trajectory, sensor_fine),
    "glass-corridor": (make_glass_corridor, corridor_trajectory, sensor_fine),
}


def build_fixture(name: str, n_frames: int = None
                  ) -> Tuple[Scene, Trajectory, SensorModel]:
    """Scene, default trajectory and sensor for a named fixture."""
    if name not in SCENES:
        raise KeyError(f"unknown scene {name!r}; have {sorted(SCENES)}")
    make_scene, make_traj, make_sensor = SCENES[name]
    traj = make_traj() if n_frames is None else make_traj(n_frames)
    return make_scene(), traj, make_sensor()
