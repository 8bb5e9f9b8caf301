"""Scripted demonstration experts and the reward they optimize.

Both experts score a fixed lattice of constant (v, steer) candidates by
rolling each out a few steps and accumulating the task reward. They differ
only in the target that progress is measured against: the greedy expert
drives at the final goal, the path-following expert at a sliding local
goal on the global plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds_mod
from . import geometry, planning, seeding, sensing, world as world_mod
from .config import ScenarioSpec
from .world import Action, World


@dataclass(frozen=True)
class RewardParams:
    r_arrival: float = 500.0
    r_collision: float = -500.0
    shaping_gain: float = 200.0     # per meter of progress toward the goal
    r_step: float = 5.0             # constant per-step cost
    r_reverse: float = -10.0        # applied while v < 0


def reward_step(p_prev, p_curr, goal_xy, v: float, reached: bool, collided: bool,
                params: RewardParams = RewardParams()) -> float:
    """Reward for one transition; single float expression, left to right,
    so independent reimplementations can match it bit for bit."""
    d_prev = math.hypot(p_prev[0] - goal_xy[0], p_prev[1] - goal_xy[1])
    d_curr = math.hypot(p_curr[0] - goal_xy[0], p_curr[1] - goal_xy[1])
    r_goal = params.r_arrival if reached else 0.0
    r_safe = params.r_collision if collided else 0.0
    r_shaping = params.shaping_gain * (d_prev - d_curr) - params.r_step
    r_back = params.r_reverse if v < 0 else 0.0
    return ((r_goal + r_safe) + r_shaping) + r_back


@dataclass(frozen=True)
class ExpertConfig:
    n_v: int = 7
    n_steer: int = 11
    horizon: int = 5                # rollout steps per candidate
    rollout_dt: float = 0.5        # seconds per rollout step; a held arc is
                                   # previewed well past the control period,
                                   # which is what lets candidates swerve
                                   # around obstacles instead of nosing in
    safety_margin: float = 0.1      # extra footprint inflation in rollouts
    reward: RewardParams = field(default_factory=RewardParams)


def _candidate_lattice(robot, cfg: ExpertConfig):
    # velocities skip zero: a stationary candidate would tie straight-reverse
    # under the reward (both lose exactly r_step per step) and the tie-break
    # would freeze the robot whenever it spawns facing away from the target
    n_rev = max(cfg.n_v // 3, 1)
    v = np.concatenate([
        np.linspace(robot.v_limits[0], robot.v_limits[0] / 2, n_rev),
        np.linspace(robot.v_limits[1] / 5, robot.v_limits[1], cfg.n_v - n_rev),
    ])
    phi = np.linspace(-robot.steer_limit, robot.steer_limit, cfg.n_steer)
    vv, pp = np.meshgrid(v, phi, indexing="ij")
    return vv.ravel(), pp.ravel()


def _arc_step(x, y, th, v, phi, dt, wheelbase):
    t = np.tan(phi)
    straight = np.abs(t) < 1e-9
    t_safe = np.where(straight, 1.0, t)
    omega = v * t_safe / wheelbase
    r = wheelbase / t_safe
    h1 = th + omega * dt
    nx = np.where(straight, x + v * dt * np.cos(th), x + r * (np.sin(h1) - np.sin(th)))
    ny = np.where(straight, y + v * dt * np.sin(th), y - r * (np.cos(h1) - np.cos(th)))
    nth = np.where(straight, th, np.arctan2(np.sin(h1), np.cos(h1)))
    return nx, ny, nth


def _select(order_keys):
    """order_keys: tuple of arrays, first is primary. Returns argmin index
    under lexicographic order."""
    idx = np.lexsort(order_keys[::-1])
    return int(idx[0])


def _decide(world: World, target_xy, cfg: ExpertConfig) -> Action:
    robot = world.spec.robot
    # rollout collision checks use a slightly grown footprint; the margin
    # keeps demonstrations off pinch points the true footprint just clears
    hl = robot.footprint[0] / 2 + cfg.safety_margin
    hw = robot.footprint[1] / 2 + cfg.safety_margin
    tol = world.spec.goal_tolerance
    v, phi = _candidate_lattice(robot, cfg)
    n = v.shape[0]

    # collisions are sampled at simulator rate along the arc; the reward is
    # scored at the coarser rollout knots
    sub = max(int(round(cfg.rollout_dt / robot.dt)), 1)
    circles0, rects, segments = world.static_geoms()
    total = cfg.horizon * sub
    ped_frames = []
    if world.pedestrians:
        peds = world.pedestrians
        for k in range(1, total + 1):
            ped_frames.append(np.array(
                [[*p.advanced(robot.dt * k).position(), p.radius] for p in peds]))

    x = np.full(n, world.robot.x)
    y = np.full(n, world.robot.y)
    th = np.full(n, world.robot.heading)
    d_prev = np.full(n, math.hypot(world.robot.x - target_xy[0],
                                   world.robot.y - target_xy[1]))
    score = np.zeros(n)
    discarded = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    min_clear = np.full(n, np.inf)
    rp = cfg.reward

    for k in range(total):
        x, y, th = _arc_step(x, y, th, v, phi, robot.dt, robot.wheelbase)
        circles = circles0
        if ped_frames:
            pf = ped_frames[k]
            circles = np.vstack([circles0, pf]) if circles0.shape[0] else pf
        hit = (
            geometry.boxes_outside_bounds(x, y, th, hl, hw, world.bounds)
            | geometry.boxes_hit_circles(x, y, th, hl, hw, circles)
            | geometry.boxes_hit_rects(x, y, th, hl, hw, rects)
            | geometry.boxes_hit_segments(x, y, th, hl, hw, segments)
        )
        d = np.hypot(x - target_xy[0], y - target_xy[1])
        active = ~discarded & ~done
        reached = active & (d <= tol)
        done |= reached
        score += np.where(reached, rp.r_arrival, 0.0)
        discarded |= active & ~reached & hit
        if (k + 1) % sub == 0:
            live = ~discarded & ~done
            step_r = (rp.shaping_gain * (d_prev - d) - rp.r_step
                      + np.where(v < 0, rp.r_reverse, 0.0))
            score += np.where(live, step_r, 0.0)
            d_prev = np.where(live, d, d_prev)
        min_clear = np.minimum(min_clear, geometry.point_clearance(
            x, y, circles, rects, segments))

    valid = ~discarded
    # ties break toward straighter steering, then faster forward motion
    if valid.any():
        key_score = np.where(valid, -score, np.inf)
        i = _select((key_score, np.abs(phi), -v))
    else:
        i = _select((-min_clear, np.abs(phi), -v))
    return Action(float(v[i]), float(phi[i]))


def expert_greedy(world: World, cfg: ExpertConfig = ExpertConfig()) -> Action:
    """Drive straight at the final goal; stalls in cul-de-sacs by design."""
    return _decide(world, (world.goal.x, world.goal.y), cfg)


def expert_path_follow(world: World, local_goal_xy,
                       cfg: ExpertConfig = ExpertConfig()) -> Action:
    """Same scoring, but progress is measured toward the local goal."""
    return _decide(world, (local_goal_xy[0], local_goal_xy[1]), cfg)


class CollectionStalled(RuntimeError):
    pass


@dataclass
class CollectParams:
    window: int = 20                # local-goal lookahead, waypoints
    plan_inflation: float = 0.5
    grid_res: float = 0.2
    n_beams: int = 360
    max_range: float = 6.0
    costmap_size: int = 84
    costmap_res: float = 0.1
    path_points: int = 16
    path_spacing: float = 0.4
    gm_crop: float = 6.4
    gm_dim: int = 32
    expert: ExpertConfig = field(default_factory=ExpertConfig)


def rollout_episode(world: World, preference: str, params: CollectParams):
    """Run one expert episode to termination, recording per-step records.

    Returns (Trajectory, outcome). Both experts replan every step so the
    dataset always carries the current global path encoding.
    """
    robot_cfg = world.spec.robot
    grid = planning.inflate(world.occupancy(params.grid_res), params.plan_inflation)
    goal_xy = (world.goal.x, world.goal.y)
    field = planning.dijkstra_field(grid, grid.world_to_cell(*goal_xy))

    maps, gms, goals, pcs, acts, rews, flags = [], [], [], [], [], [], []
    path = None
    outcome = None
    while outcome is None:
        pose = world.robot
        scan = sensing.raycast(world, pose, params.n_beams, params.max_range)
        cmap = sensing.scan_to_costmap(scan, params.costmap_size, params.costmap_res)
        try:
            path = planning.field_path(field, pose.xy)
        except planning.PlanningError:
            if path is None:
                raise
            # keep the previous plan when the robot strays into inflated cells
        pc = planning.encode_path_condition(path, (pose.x, pose.y, pose.heading),
                                            params.path_points, params.path_spacing)
        gm = planning.encode_global_map(world.occupancy(params.grid_res),
                                        pose.xy, params.gm_crop, params.gm_dim)
        rel_g = sensing.relative_goal(pose, goal_xy)

        if preference == "greedy":
            action = expert_greedy(world, params.expert)
        else:
            lg = planning.window_target(path, pose.xy, params.window, goal_xy)
            action = expert_path_follow(world, lg, params.expert)

        p_prev = (pose.x, pose.y)
        outcome = world_mod.episode_step(world, action)
        executed = action.clamped(robot_cfg)
        reached = outcome is not None and outcome.tag == world_mod.SUCCESS
        collided = outcome is not None and outcome.tag == world_mod.COLLISION
        r = reward_step(p_prev, (world.robot.x, world.robot.y), goal_xy,
                        executed.v, reached, collided, params.expert.reward)

        maps.append(cmap)
        gms.append(gm)
        goals.append(rel_g)
        pcs.append(pc)
        acts.append([executed.v, executed.steer])
        rews.append(r)
        flags.append((ds_mod.FLAG_REACHED if reached else 0)
                     | (ds_mod.FLAG_COLLIDED if collided else 0))

    traj = ds_mod.Trajectory(
        preference, outcome.tag, world.spec.kind, world.spec.seed,
        ds_mod.pack_maps(np.array(maps)),
        ds_mod.pack_maps(np.array(gms)),
        np.array(goals, dtype=np.float32),
        np.array(pcs, dtype=np.float32),
        np.array(acts, dtype=np.float32),
        np.array(rews, dtype=np.float32),
        np.array(flags, dtype=np.uint8),
    )
    return traj, outcome


def collect(scenario: ScenarioSpec, n_episodes: int, keep_failures: bool = False,
            params: CollectParams = CollectParams()) -> ds_mod.Dataset:
    """Half the episodes from the greedy expert, half from the
    path-following expert, on freshly generated worlds. Failed episodes are
    retried with new layouts unless keep_failures is set."""
    if n_episodes % 2:
        raise ValueError(f"episode count must be even, got {n_episodes}")
    half = n_episodes // 2
    budget = max(20 * n_episodes, 200)
    trajs = []
    attempt = 0
    for preference in ("greedy", "path"):
        kept = 0
        while kept < half:
            if attempt >= budget:
                raise CollectionStalled(
                    f"kept {len(trajs)}/{n_episodes} episodes after {attempt} attempts")
            seed = seeding.episode_seed(scenario.seed, attempt)
            attempt += 1
            try:
                w = world_mod.generate_scenario(scenario.with_seed(seed))
            except world_mod.InfeasibleScenario:
                continue
            traj, outcome = rollout_episode(w, preference, params)
            if outcome.tag == world_mod.SUCCESS or keep_failures:
                trajs.append(traj)
                kept += 1
    return ds_mod.Dataset(
        trajs, (params.costmap_size, params.costmap_size), params.gm_dim,
        params.path_points, scenario.t_ep, scenario.kind, scenario.seed)
