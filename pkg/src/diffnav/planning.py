"""Occupancy grids, obstacle inflation, A* global planning, and the
path-derived conditioning signals (local goal, egocentric path vector,
coarse global-map crop).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import geometry

SQRT2 = math.sqrt(2.0)


class PlanningError(Exception):
    pass


class NoPath(PlanningError):
    pass


class StartOrGoalOccupied(PlanningError):
    pass


class EmptyPath(PlanningError):
    pass


@dataclass
class OccGrid:
    """Boolean occupancy over [0, size]^2; cells[ix, iy] covers the square
    [ix*res, (ix+1)*res] x [iy*res, (iy+1)*res]."""

    cells: np.ndarray
    resolution: float

    @property
    def shape(self):
        return self.cells.shape

    def world_to_cell(self, x, y):
        n = self.cells.shape[0]
        ix = min(max(int(np.floor(x / self.resolution)), 0), n - 1)
        iy = min(max(int(np.floor(y / self.resolution)), 0), self.cells.shape[1] - 1)
        return ix, iy

    def cell_center(self, ix, iy):
        return ((ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution)


def rasterize_geoms(circles, rects, segments, size: float, resolution: float) -> OccGrid:
    """Mark every cell whose closed square intersects any geometry."""
    n = int(round(size / resolution))
    occ = np.zeros((n, n), dtype=bool)
    res = resolution

    for cx, cy, r in circles:
        ix0 = max(int(np.floor((cx - r) / res)), 0)
        ix1 = min(int(np.floor((cx + r) / res)), n - 1)
        iy0 = max(int(np.floor((cy - r) / res)), 0)
        iy1 = min(int(np.floor((cy + r) / res)), n - 1)
        if ix1 < ix0 or iy1 < iy0:
            continue
        ixs = np.arange(ix0, ix1 + 1)
        iys = np.arange(iy0, iy1 + 1)
        # closest point of each cell square to the circle center
        qx = np.clip(cx, ixs * res, (ixs + 1) * res)
        qy = np.clip(cy, iys * res, (iys + 1) * res)
        d2 = (qx[:, None] - cx) ** 2 + (qy[None, :] - cy) ** 2
        occ[ix0:ix1 + 1, iy0:iy1 + 1] |= d2 <= r * r

    for x0, y0, x1, y1 in rects:
        ix0 = max(int(np.floor(x0 / res)), 0)
        ix1 = min(int(np.floor(x1 / res)), n - 1)
        iy0 = max(int(np.floor(y0 / res)), 0)
        iy1 = min(int(np.floor(y1 / res)), n - 1)
        if ix1 >= ix0 and iy1 >= iy0:
            occ[ix0:ix1 + 1, iy0:iy1 + 1] = True

    for ax, ay, bx, by in segments:
        # walk the segment at sub-cell resolution; cells are closed so this
        # dense sampling marks every square the segment passes through
        length = math.hypot(bx - ax, by - ay)
        m = max(int(math.ceil(length / (0.25 * res))), 1)
        ts = np.linspace(0.0, 1.0, m + 1)
        xs = ax + ts * (bx - ax)
        ys = ay + ts * (by - ay)
        ixs = np.clip(np.floor(xs / res).astype(int), 0, n - 1)
        iys = np.clip(np.floor(ys / res).astype(int), 0, n - 1)
        occ[ixs, iys] = True
        # points landing exactly on a cell edge also touch the lower cell
        on_x = np.isclose(xs / res, np.round(xs / res)) & (ixs > 0)
        on_y = np.isclose(ys / res, np.round(ys / res)) & (iys > 0)
        occ[np.clip(ixs - 1, 0, n - 1)[on_x], iys[on_x]] = True
        occ[ixs[on_y], np.clip(iys - 1, 0, n - 1)[on_y]] = True

    return OccGrid(occ, resolution)


def rasterize_world(world, resolution: float = 0.2) -> OccGrid:
    """Static obstacles only; pedestrians are never rasterized."""
    return rasterize_geoms(
        geometry.pack_circles(world.circles),
        geometry.pack_rects(world.rects),
        geometry.pack_segments(world.walls),
        world.size,
        resolution,
    )


def inflate(grid: OccGrid, radius: float) -> OccGrid:
    """Occupied iff within `radius` (center-to-center, meters) of an
    occupied cell."""
    if not grid.cells.any():
        return OccGrid(grid.cells.copy(), grid.resolution)
    dist = ndimage.distance_transform_edt(
        ~grid.cells, sampling=(grid.resolution, grid.resolution)
    )
    return OccGrid(dist <= radius + 1e-9, grid.resolution)


@dataclass
class GlobalPath:
    """A* result. waypoints are world-frame cell centers, grid-adjacent in
    order; cost is in cell units (straight=1, diagonal=sqrt2)."""

    waypoints: np.ndarray            # (M, 2)
    cumulative_length: np.ndarray    # (M,) meters, starts at 0
    cost: float
    cells: np.ndarray                # (M, 2) int indices

    @property
    def length(self) -> float:
        return float(self.cumulative_length[-1])


# neighbor order: fixed, row-major over the 3x3 block minus center
_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_STEP_COST = [SQRT2, 1.0, SQRT2, 1.0, 1.0, SQRT2, 1.0, SQRT2]


def _snap_free(cells: np.ndarray, ix: int, iy: int, radius: int = 3):
    if not cells[ix, iy]:
        return ix, iy
    nx, ny = cells.shape
    best = None
    for dx in range(-radius, radius + 1):
        for dy in range(-radius, radius + 1):
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < nx and 0 <= jy < ny and not cells[jx, jy]:
                key = (dx * dx + dy * dy, jx * ny + jy)
                if best is None or key < best[0]:
                    best = (key, (jx, jy))
    if best is None:
        raise StartOrGoalOccupied(f"no free cell within {radius} cells of ({ix}, {iy})")
    return best[1]


def _octile(dx: int, dy: int) -> float:
    dx, dy = abs(dx), abs(dy)
    lo = min(dx, dy)
    return (max(dx, dy) - lo) + SQRT2 * lo


def _finalize_path(cell_arr: np.ndarray, res: float) -> GlobalPath:
    # canonical cost: straight and diagonal step counts, so equal-cost paths
    # from different searches compare exactly
    if len(cell_arr) > 1:
        steps = np.abs(np.diff(cell_arr, axis=0))
        n_diag = int((steps.sum(axis=1) == 2).sum())
        n_straight = len(cell_arr) - 1 - n_diag
    else:
        n_diag = n_straight = 0
    cost = n_straight * 1.0 + n_diag * SQRT2
    wp = (cell_arr + 0.5) * res
    seg = np.hypot(*np.diff(wp, axis=0).T) if len(cell_arr) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return GlobalPath(wp, cum, cost, cell_arr)


def astar(grid: OccGrid, start, goal) -> GlobalPath:
    """8-connected A* with octile costs and heuristic.

    start/goal are cell indices; occupied endpoints snap to the nearest
    free cell within 3 cells. Ties in f break by smaller h then row-major
    cell index, which fixes the expansion order deterministically.
    """
    cells = grid.cells
    nx, ny = cells.shape
    sx, sy = _snap_free(cells, *start)
    gx, gy = _snap_free(cells, *goal)

    g = np.full((nx, ny), np.inf)
    came = np.full((nx, ny), -1, dtype=np.int64)
    closed = np.zeros((nx, ny), dtype=bool)
    g[sx, sy] = 0.0
    h0 = _octile(gx - sx, gy - sy)
    heap = [(h0, h0, sx * ny + sy)]
    found = False
    while heap:
        f, h, flat = heapq.heappop(heap)
        cx, cy = divmod(flat, ny)
        if closed[cx, cy]:
            continue
        closed[cx, cy] = True
        if (cx, cy) == (gx, gy):
            found = True
            break
        gc = g[cx, cy]
        for (dx, dy), w in zip(_NEIGHBORS, _STEP_COST):
            jx, jy = cx + dx, cy + dy
            if not (0 <= jx < nx and 0 <= jy < ny) or cells[jx, jy] or closed[jx, jy]:
                continue
            cand = gc + w
            if cand < g[jx, jy]:
                g[jx, jy] = cand
                came[jx, jy] = flat
                hn = _octile(gx - jx, gy - jy)
                heapq.heappush(heap, (cand + hn, hn, jx * ny + jy))
    if not found:
        raise NoPath(f"no route from ({sx},{sy}) to ({gx},{gy})")

    path = []
    flat = gx * ny + gy
    while flat != -1:
        path.append(divmod(flat, ny))
        flat = came[path[-1][0], path[-1][1]]
    path.reverse()
    return _finalize_path(np.array(path, dtype=int), grid.resolution)


def plan_path(grid: OccGrid, start_xy, goal_xy) -> GlobalPath:
    return astar(grid, grid.world_to_cell(*start_xy), grid.world_to_cell(*goal_xy))


@dataclass
class DistanceField:
    """Cost-to-goal over the grid, for cheap per-step replanning against a
    fixed goal. Paths extracted from it have exactly the optimal A* cost."""

    grid: OccGrid
    goal_cell: tuple
    cost: np.ndarray               # (nx, ny), inf where unreachable


def dijkstra_field(grid: OccGrid, goal) -> DistanceField:
    cells = grid.cells
    nx, ny = cells.shape
    gx, gy = _snap_free(cells, *goal)
    g = np.full((nx, ny), np.inf)
    closed = np.zeros((nx, ny), dtype=bool)
    g[gx, gy] = 0.0
    heap = [(0.0, gx * ny + gy)]
    while heap:
        d, flat = heapq.heappop(heap)
        cx, cy = divmod(flat, ny)
        if closed[cx, cy]:
            continue
        closed[cx, cy] = True
        for (dx, dy), w in zip(_NEIGHBORS, _STEP_COST):
            jx, jy = cx + dx, cy + dy
            if not (0 <= jx < nx and 0 <= jy < ny) or cells[jx, jy] or closed[jx, jy]:
                continue
            cand = d + w
            if cand < g[jx, jy]:
                g[jx, jy] = cand
                heapq.heappush(heap, (cand, jx * ny + jy))
    return DistanceField(grid, (gx, gy), g)


def field_path(field: DistanceField, start_xy) -> GlobalPath:
    """Greedy descent of the cost-to-goal field from the robot cell."""
    grid = field.grid
    ny = grid.cells.shape[1]
    sx, sy = _snap_free(grid.cells, *grid.world_to_cell(*start_xy))
    g = field.cost
    if not np.isfinite(g[sx, sy]):
        raise NoPath(f"cell ({sx},{sy}) disconnected from goal {field.goal_cell}")
    path = [(sx, sy)]
    cx, cy = sx, sy
    while (cx, cy) != field.goal_cell:
        best = None
        for (dx, dy), w in zip(_NEIGHBORS, _STEP_COST):
            jx, jy = cx + dx, cy + dy
            if 0 <= jx < g.shape[0] and 0 <= jy < ny and np.isfinite(g[jx, jy]):
                key = (g[jx, jy] + w, jx * ny + jy)
                if best is None or key < best[0]:
                    best = (key, (jx, jy))
        cx, cy = best[1]
        path.append((cx, cy))
    return _finalize_path(np.array(path, dtype=int), grid.resolution)


def nearest_waypoint(path: GlobalPath, xy) -> int:
    d2 = (path.waypoints[:, 0] - xy[0]) ** 2 + (path.waypoints[:, 1] - xy[1]) ** 2
    return int(np.argmin(d2))  # first index on ties


def local_goal(path: GlobalPath, robot_xy, w: int):
    """The waypoint w steps ahead of the nearest path point, clamped to the
    path end. Returns (x, y, heading) with heading along the path."""
    if path.waypoints.shape[0] == 0:
        raise EmptyPath("path has no waypoints")
    i = nearest_waypoint(path, robot_xy)
    j = min(i + w, len(path.waypoints) - 1)
    x, y = path.waypoints[j]
    if j + 1 < len(path.waypoints):
        nx, ny = path.waypoints[j + 1]
        heading = math.atan2(ny - y, nx - x)
    elif j > 0:
        px, py = path.waypoints[j - 1]
        heading = math.atan2(y - py, x - px)
    else:
        heading = 0.0
    return float(x), float(y), float(heading)


def window_target(path: GlobalPath, robot_xy, w: int, goal_xy):
    """Steering target for the path-following controller: the sliding-window
    local goal, or the exact goal position once the window reaches the path
    end (the final waypoint is a cell center up to half a diagonal off)."""
    if path.waypoints.shape[0] == 0:
        raise EmptyPath("path has no waypoints")
    i = nearest_waypoint(path, robot_xy)
    j = min(i + w, len(path.waypoints) - 1)
    if j == len(path.waypoints) - 1:
        return (float(goal_xy[0]), float(goal_xy[1]))
    x, y = path.waypoints[j]
    return (float(x), float(y))


def encode_path_condition(path: GlobalPath, pose, n_points: int = 16,
                          spacing: float = 0.4) -> np.ndarray:
    """Flat (2*n_points,) vector of path samples ahead of the robot, spaced
    `spacing` meters along the path and rotated into the robot frame.
    Samples past the path end clamp to the final waypoint."""
    if path.waypoints.shape[0] == 0:
        raise EmptyPath("path has no waypoints")
    x, y, heading = pose
    i = nearest_waypoint(path, (x, y))
    s0 = path.cumulative_length[i]
    s = np.minimum(s0 + spacing * np.arange(1, n_points + 1), path.cumulative_length[-1])
    px = np.interp(s, path.cumulative_length, path.waypoints[:, 0])
    py = np.interp(s, path.cumulative_length, path.waypoints[:, 1])
    c, sn = math.cos(heading), math.sin(heading)
    dx, dy = px - x, py - y
    out = np.empty(2 * n_points)
    out[0::2] = c * dx + sn * dy
    out[1::2] = -sn * dx + c * dy
    return out


def encode_global_map(grid: OccGrid, robot_xy, crop_size: float = 6.4,
                      out_dim: int = 32) -> np.ndarray:
    """Coarse occupancy crop centered on the robot, world-axis aligned.

    Each output cell is occupied iff any fine occupied cell center falls
    inside it. Regions outside the map read as free.
    """
    occ = grid.cells
    res = grid.resolution
    # integral image over occupancy counts, padded with a zero row/col
    ii = np.zeros((occ.shape[0] + 1, occ.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(occ, axis=0), axis=1, out=ii[1:, 1:])

    x0 = robot_xy[0] - crop_size / 2
    y0 = robot_xy[1] - crop_size / 2
    cell = crop_size / out_dim
    edges_x = x0 + cell * np.arange(out_dim + 1)
    edges_y = y0 + cell * np.arange(out_dim + 1)
    # fine cell center (i + 0.5) * res lies in [a, b) iff i in [a/res - 0.5, b/res - 0.5)
    fx = np.clip(np.ceil(edges_x / res - 0.5).astype(int), 0, occ.shape[0])
    fy = np.clip(np.ceil(edges_y / res - 0.5).astype(int), 0, occ.shape[1])
    counts = (
        ii[fx[1:], :][:, fy[1:]] - ii[fx[:-1], :][:, fy[1:]]
        - ii[fx[1:], :][:, fy[:-1]] + ii[fx[:-1], :][:, fy[:-1]]
    )
    return counts > 0
