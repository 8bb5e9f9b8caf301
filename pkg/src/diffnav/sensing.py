"""Simulated 360-degree laser and the egocentric observation stack fed to
the policy: binary costmaps from scan endpoints, relative goal vector, and
optional path / global-map conditioning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


@dataclass
class LaserScan:
    """Beam i points at heading + i * 2*pi/n, counter-clockwise from the
    robot's forward axis."""

    ranges: np.ndarray
    max_range: float

    @property
    def n_beams(self) -> int:
        return len(self.ranges)

    def relative_angles(self) -> np.ndarray:
        n = self.n_beams
        return 2.0 * math.pi * np.arange(n) / n


def raycast(world, pose, n_beams: int = 360, max_range: float = 5.0) -> LaserScan:
    """Cast beams from the robot center against obstacles, pedestrians and
    walls. Beams that exit an open world read max_range."""
    from . import geometry  # local to keep module import light

    circles, rects, segments = world.static_geoms()
    peds = world.ped_circles()
    if peds.shape[0]:
        circles = np.vstack([circles, peds]) if circles.shape[0] else peds
    angles = pose.heading + 2.0 * math.pi * np.arange(n_beams) / n_beams
    ranges = geometry.raycast_ranges(pose.x, pose.y, angles, circles, rects,
                                     segments, max_range)
    return LaserScan(ranges, float(max_range))


def scan_to_costmap(scan: LaserScan, size: int = 84, resolution: float = 0.1) -> np.ndarray:
    """Egocentric binary occupancy: scan endpoints within the window mark
    cells; max-range returns mark nothing. Robot sits at the center cell
    with +x forward, and the center cell is always free."""
    half = size // 2
    hit = scan.ranges < scan.max_range
    if not hit.any():
        return np.zeros((size, size), dtype=bool)
    ang = scan.relative_angles()[hit]
    r = scan.ranges[hit]
    ix = half + np.floor(r * np.cos(ang) / resolution + 0.5).astype(int)
    iy = half + np.floor(r * np.sin(ang) / resolution + 0.5).astype(int)
    keep = (ix >= 0) & (ix < size) & (iy >= 0) & (iy < size)
    grid = np.zeros((size, size), dtype=bool)
    grid[ix[keep], iy[keep]] = True
    grid[half, half] = False
    return grid


def relative_goal(pose, goal_xy) -> np.ndarray:
    """Goal position rotated into the robot frame."""
    dx = goal_xy[0] - pose.x
    dy = goal_xy[1] - pose.y
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


@dataclass
class Observation:
    costmaps: np.ndarray            # (T_o, H, W) bool, oldest first
    rel_goal: np.ndarray            # (2,)
    path_cond: np.ndarray | None    # (2P,) egocentric path samples
    global_map: np.ndarray | None   # (d, d) bool coarse crop


def assemble_observation(history, rel_goal, path_cond=None, global_map=None,
                         t_obs: int = 2) -> Observation:
    """Stack the last t_obs costmaps (repeat the first at episode start)."""
    if len(history) == 0:
        raise ShapeMismatch("need at least one costmap")
    maps = list(history)[-t_obs:]
    while len(maps) < t_obs:
        maps.insert(0, maps[0])
    shape0 = maps[0].shape
    if any(m.shape != shape0 for m in maps):
        raise ShapeMismatch(f"costmap shapes differ: {[m.shape for m in maps]}")
    rel_goal = np.asarray(rel_goal, dtype=float)
    if rel_goal.shape != (2,):
        raise ShapeMismatch(f"rel_goal must be (2,), got {rel_goal.shape}")
    if path_cond is not None:
        path_cond = np.asarray(path_cond, dtype=float)
        if path_cond.ndim != 1 or path_cond.size % 2:
            raise ShapeMismatch(f"path condition must be flat 2P, got {path_cond.shape}")
    return Observation(np.stack(maps), rel_goal, path_cond, global_map)
