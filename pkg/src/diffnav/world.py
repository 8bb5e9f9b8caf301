"""Scenario generation and forward simulation.

A World holds static obstacles (discs, axis-aligned boxes, wall segments),
looping pedestrians, and the robot state. Stepping is fixed-dt bicycle
kinematics with an exact constant-control arc integration, so a held
(v, steer) traces a circle of radius L / tan(steer) to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, planning, seeding
from .config import RobotConfig, ScenarioSpec

SUCCESS = "success"
COLLISION = "collision"
STUCK = "stuck"


class WorldError(Exception):
    pass


class InfeasibleScenario(WorldError):
    pass


class EpisodeAlreadyFinished(WorldError):
    pass


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass
class Pose2D:
    x: float
    y: float
    heading: float

    @property
    def xy(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class Action:
    v: float
    steer: float

    def clamped(self, robot: RobotConfig) -> "Action":
        v = min(max(self.v, robot.v_limits[0]), robot.v_limits[1])
        steer = min(max(self.steer, -robot.steer_limit), robot.steer_limit)
        return Action(v, steer)


@dataclass
class Circle:
    cx: float
    cy: float
    r: float


@dataclass
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass
class Wall:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass
class Pedestrian:
    """Constant-speed motion around a closed waypoint loop."""

    waypoints: np.ndarray          # (M, 2), loop closes last -> first
    speed: float
    radius: float = 0.3
    arc: float = 0.0               # meters along the loop

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        loop = np.vstack([pts, pts[:1]])
        seg = np.hypot(*np.diff(loop, axis=0).T)
        self._loop = loop
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.total = float(self._cum[-1])

    def position(self) -> np.ndarray:
        s = self.arc % self.total if self.total > 0 else 0.0
        x = np.interp(s, self._cum, self._loop[:, 0])
        y = np.interp(s, self._cum, self._loop[:, 1])
        return np.array([x, y])

    def advanced(self, dt: float) -> "Pedestrian":
        return replace(self, arc=(self.arc + self.speed * dt) % max(self.total, 1e-12))


@dataclass
class EpisodeOutcome:
    tag: str                       # SUCCESS / COLLISION / STUCK
    steps: int
    path_length: float


@dataclass
class World:
    spec: ScenarioSpec
    size: float
    circles: list
    rects: list
    walls: list
    pedestrians: list
    robot: Pose2D
    goal: Pose2D
    step_count: int = 0
    path_length: float = 0.0
    finished: EpisodeOutcome | None = None
    _static: tuple | None = field(default=None, repr=False)
    _grid_cache: dict = field(default_factory=dict, repr=False)

    @property
    def bounds(self):
        return (0.0, 0.0, self.size, self.size)

    def static_geoms(self):
        if self._static is None:
            self._static = (
                geometry.pack_circles(self.circles),
                geometry.pack_rects(self.rects),
                geometry.pack_segments(self.walls),
            )
        return self._static

    def ped_circles(self) -> np.ndarray:
        if not self.pedestrians:
            return np.zeros((0, 3))
        return np.array([[*p.position(), p.radius] for p in self.pedestrians])

    def occupancy(self, resolution: float = 0.2) -> planning.OccGrid:
        key = round(resolution, 6)
        if key not in self._grid_cache:
            self._grid_cache[key] = planning.rasterize_world(self, resolution)
        return self._grid_cache[key]


def step_kinematics(pose: Pose2D, action: Action, dt: float, wheelbase: float) -> Pose2D:
    """Bicycle model advanced along the exact constant-control arc."""
    v, phi = action.v, action.steer
    t = math.tan(phi)
    if abs(t) < 1e-9:
        return Pose2D(
            pose.x + v * dt * math.cos(pose.heading),
            pose.y + v * dt * math.sin(pose.heading),
            pose.heading,
        )
    omega = v * t / wheelbase
    r = wheelbase / t
    h0 = pose.heading
    h1 = h0 + omega * dt
    return Pose2D(
        pose.x + r * (math.sin(h1) - math.sin(h0)),
        pose.y - r * (math.cos(h1) - math.cos(h0)),
        wrap_angle(h1),
    )


def advance_pedestrians(world: World, dt: float) -> None:
    world.pedestrians = [p.advanced(dt) for p in world.pedestrians]


def collision_check(world: World, pose: Pose2D) -> bool:
    """Footprint against obstacles, pedestrians, and the world bounds."""
    robot = world.spec.robot
    hl = robot.footprint[0] / 2
    hw = robot.footprint[1] / 2
    circles, rects, segments = world.static_geoms()
    peds = world.ped_circles()
    if peds.shape[0]:
        circles = np.vstack([circles, peds]) if circles.shape[0] else peds
    x, y, th = pose.x, pose.y, pose.heading
    return bool(
        geometry.boxes_outside_bounds(x, y, th, hl, hw, world.bounds)
        or geometry.boxes_hit_circles(x, y, th, hl, hw, circles)
        or geometry.boxes_hit_rects(x, y, th, hl, hw, rects)
        or geometry.boxes_hit_segments(x, y, th, hl, hw, segments)
    )


def episode_step(world: World, action: Action) -> EpisodeOutcome | None:
    """Advance one control step in place. Checks, in order: success,
    collision, step budget. Returns the outcome when the episode ends."""
    if world.finished is not None:
        raise EpisodeAlreadyFinished(f"episode ended with {world.finished.tag!r}")
    robot = world.spec.robot
    act = action.clamped(robot)
    prev = world.robot
    world.robot = step_kinematics(prev, act, robot.dt, robot.wheelbase)
    advance_pedestrians(world, robot.dt)
    world.step_count += 1
    world.path_length += math.hypot(world.robot.x - prev.x, world.robot.y - prev.y)

    outcome = None
    gd = math.hypot(world.robot.x - world.goal.x, world.robot.y - world.goal.y)
    if gd <= world.spec.goal_tolerance:
        outcome = EpisodeOutcome(SUCCESS, world.step_count, world.path_length)
    elif collision_check(world, world.robot):
        outcome = EpisodeOutcome(COLLISION, world.step_count, world.path_length)
    elif world.step_count >= world.spec.t_ep:
        outcome = EpisodeOutcome(STUCK, world.step_count, world.path_length)
    world.finished = outcome
    return outcome


# ---------------------------------------------------------------------------
# scenario generation

_MARGIN = 0.8           # obstacle centers stay this far from the border
_SPAWN_CLEAR = 0.7      # start/goal clearance (footprint circumradius ~0.605)
_PLAN_INFLATE = 0.7     # feasibility check inflation
_GRID_RES = 0.2


def _boundary_walls(size: float):
    return [
        Wall(0.0, 0.0, size, 0.0),
        Wall(size, 0.0, size, size),
        Wall(size, size, 0.0, size),
        Wall(0.0, size, 0.0, 0.0),
    ]


def _feasible(circles, rects, walls, size, start_xy, goal_xy):
    """The planned route when one exists on the inflated grid, else None."""
    grid = planning.rasterize_geoms(
        geometry.pack_circles(circles),
        geometry.pack_rects(rects),
        geometry.pack_segments(walls),
        size,
        _GRID_RES,
    )
    infl = planning.inflate(grid, _PLAN_INFLATE)
    try:
        return planning.plan_path(infl, start_xy, goal_xy)
    except planning.PlanningError:
        return None


def _clearance(x, y, circles, rects, walls):
    return geometry.point_clearance(
        x, y,
        geometry.pack_circles(circles),
        geometry.pack_rects(rects),
        geometry.pack_segments(walls),
    )


def _sample_pose_pair(rng, size, circles, rects, walls, min_sep, tries=40):
    for _ in range(tries):
        sx, sy, gx, gy = rng.uniform(_MARGIN, size - _MARGIN, size=4)
        if math.hypot(gx - sx, gy - sy) < min_sep:
            continue
        if _clearance(sx, sy, circles, rects, walls) < _SPAWN_CLEAR:
            continue
        if _clearance(gx, gy, circles, rects, walls) < _SPAWN_CLEAR:
            continue
        return Pose2D(sx, sy, 0.0), Pose2D(gx, gy, 0.0)
    return None


def _route_heading(path, start, rng):
    """Spawn heading along the initial route, jittered. Episodes start
    oriented into their corridor rather than at a wall."""
    ahead = min(float(np.searchsorted(path.cumulative_length, 1.0)),
                len(path.waypoints) - 1)
    wx, wy = path.waypoints[int(ahead)]
    base = math.atan2(wy - start.y, wx - start.x)
    return wrap_angle(base + float(rng.uniform(-0.5, 0.5)))


def _sample_obstacles(rng, size, count, gap: float = 1.5):
    """Mixed discs and boxes away from the border. Obstacles keep a surface
    gap between each other so the field has no sub-robot pinch pockets; the
    gap relaxes automatically when many obstacles are requested."""
    circles, rects = [], []
    placed = []                     # (x, y, circumradius)
    misses = 0
    while len(placed) < count:
        x, y = rng.uniform(_MARGIN, size - _MARGIN, size=2)
        if rng.random() < 0.5:
            r = float(rng.uniform(0.25, 0.5))
            geom = Circle(float(x), float(y), r)
        else:
            hx = float(rng.uniform(0.25, 0.5))
            hy = float(rng.uniform(0.25, 0.5))
            r = math.hypot(hx, hy)
            geom = Rect(float(x - hx), float(y - hy), float(x + hx), float(y + hy))
        if any(math.hypot(x - px, y - py) < r + pr + gap for px, py, pr in placed):
            misses += 1
            if misses >= 40:
                misses = 0
                gap = max(gap / 2, 0.2)
            continue
        placed.append((x, y, r))
        if isinstance(geom, Circle):
            circles.append(geom)
        else:
            rects.append(geom)
    return circles, rects


def _sample_pedestrians(rng, size, count, circles, rects, walls, start):
    peds = []
    tries = 0
    while len(peds) < count and tries < 200:
        tries += 1
        n_wp = int(rng.integers(3, 5))
        pts = rng.uniform(_MARGIN, size - _MARGIN, size=(n_wp, 2))
        if _clearance(pts[:, 0], pts[:, 1], circles, rects, walls).min() < 0.6:
            continue
        if np.hypot(pts[0, 0] - start.x, pts[0, 1] - start.y) < 1.5:
            continue
        per = np.vstack([pts, pts[:1]])
        if np.hypot(*np.diff(per, axis=0).T).sum() < 2.0:
            continue
        speed = float(rng.uniform(0.3, 0.6))
        peds.append(Pedestrian(pts, speed))
    return peds


def _maze_walls(rng, size):
    """Recursive division, depth 2, with one door per dividing wall."""
    walls = []
    min_room = 2.4
    door = 2.0

    def split(x0, y0, x1, y1, depth):
        w, h = x1 - x0, y1 - y0
        if depth == 0 or max(w, h) < 2 * min_room or min(w, h) < door + 0.6:
            return
        if w >= h:
            sx = float(rng.uniform(x0 + min_room, x1 - min_room))
            dy = float(rng.uniform(y0 + 0.3, y1 - 0.3 - door))
            walls.append(Wall(sx, y0, sx, dy))
            walls.append(Wall(sx, dy + door, sx, y1))
            split(x0, y0, sx, y1, depth - 1)
            split(sx, y0, x1, y1, depth - 1)
        else:
            sy = float(rng.uniform(y0 + min_room, y1 - min_room))
            dx = float(rng.uniform(x0 + 0.3, x1 - 0.3 - door))
            walls.append(Wall(x0, sy, dx, sy))
            walls.append(Wall(dx + door, sy, x1, sy))
            split(x0, y0, x1, sy, depth - 1)
            split(x0, sy, x1, y1, depth - 1)

    split(0.0, 0.0, size, size, 2)
    return walls


def _zigzag_walls(rng, size):
    """Two staggered baffles forcing an S-shaped route."""
    gap = float(rng.uniform(2.0, 2.6))
    y1 = size / 3 + float(rng.uniform(-0.4, 0.4))
    y2 = 2 * size / 3 + float(rng.uniform(-0.4, 0.4))
    return [Wall(0.0, y1, size - gap, y1), Wall(gap, y2, size, y2)]


def generate_scenario(spec: ScenarioSpec, max_attempts: int = 60) -> World:
    """Seeded rejection sampling; raises InfeasibleScenario when the budget
    runs out without a start-goal pair that an inflated-grid planner can
    connect."""
    size = spec.world_size
    open_world = spec.kind == "dynamic"
    for attempt in range(max_attempts):
        rng = seeding.stream(spec.seed, "scenario", attempt)
        walls = [] if open_world else _boundary_walls(size)
        if spec.kind == "maze":
            walls += _maze_walls(rng, size)
        elif spec.kind == "zigzag":
            walls += _zigzag_walls(rng, size)
        circles, rects = _sample_obstacles(rng, size, spec.obstacle_count)

        min_sep = 0.45 * size if spec.kind in ("static", "dynamic") else 0.6 * size
        pair = _sample_pose_pair(rng, size, circles, rects, walls, min_sep)
        if pair is None:
            continue
        start, goal = pair
        route = _feasible(circles, rects, walls, size, start.xy, goal.xy)
        if route is None:
            continue
        start.heading = _route_heading(route, start, rng)
        peds = _sample_pedestrians(rng, size, spec.pedestrian_count,
                                   circles, rects, walls, start)
        if len(peds) < spec.pedestrian_count:
            continue
        world = World(spec, size, circles, rects, walls, peds, start, goal)
        if collision_check(world, start):
            continue
        return world
    raise InfeasibleScenario(
        f"no feasible {spec.kind!r} layout after {max_attempts} attempts (seed {spec.seed})"
    )
