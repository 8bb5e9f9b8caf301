"""Robot and scenario configuration, plus the JSON scenario-spec format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

SCENARIO_KINDS = ("static", "dynamic", "maze", "zigzag")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RobotConfig:
    """Ackermann robot parameters (bicycle model + rectangular footprint)."""

    wheelbase: float = 0.6           # m
    footprint: tuple[float, float] = (0.95, 0.75)  # length x width, m
    v_limits: tuple[float, float] = (-0.5, 1.0)    # m/s, reversing allowed
    steer_limit: float = 0.6         # rad, symmetric
    dt: float = 0.1                  # s per simulation step

    def __post_init__(self):
        if self.v_limits[0] >= 0 or self.v_limits[0] >= self.v_limits[1]:
            raise ConfigError(f"v_limits must satisfy v_min < 0 < v_max, got {self.v_limits}")
        if self.steer_limit <= 0 or self.wheelbase <= 0 or self.dt <= 0:
            raise ConfigError("wheelbase, steer_limit and dt must be positive")

    @property
    def half_diagonal(self) -> float:
        hl, hw = self.footprint[0] / 2, self.footprint[1] / 2
        return (hl * hl + hw * hw) ** 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one procedurally generated scenario family instance."""

    kind: str
    seed: int
    obstacle_count: int = 8
    pedestrian_count: int = 0
    world_size: float = 10.0
    t_ep: int = 200
    goal_tolerance: float = 0.3
    robot: RobotConfig = field(default_factory=RobotConfig)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}, expected one of {SCENARIO_KINDS}")
        if self.obstacle_count < 0 or self.pedestrian_count < 0:
            raise ConfigError("entity counts must be >= 0")
        if self.world_size <= 0 or self.t_ep <= 0 or self.goal_tolerance <= 0:
            raise ConfigError("world_size, t_ep and goal_tolerance must be positive")

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=int(seed))


def spec_from_dict(d: dict) -> ScenarioSpec:
    d = dict(d)
    robot_d = d.pop("robot", None)
    robot = RobotConfig() if robot_d is None else RobotConfig(
        wheelbase=float(robot_d.get("wheelbase", 0.6)),
        footprint=tuple(robot_d.get("footprint", (0.95, 0.75))),
        v_limits=tuple(robot_d.get("v_limits", (-0.5, 1.0))),
        steer_limit=float(robot_d.get("steer_limit", 0.6)),
        dt=float(robot_d.get("dt", 0.1)),
    )
    try:
        return ScenarioSpec(
            kind=d["kind"],
            seed=int(d.get("seed", 0)),
            obstacle_count=int(d.get("obstacle_count", 8)),
            pedestrian_count=int(d.get("pedestrian_count", 0)),
            world_size=float(d.get("world_size", 10.0)),
            t_ep=int(d.get("t_ep", 200)),
            goal_tolerance=float(d.get("goal_tolerance", 0.3)),
            robot=robot,
        )
    except KeyError as e:
        raise ConfigError(f"scenario config missing key {e.args[0]!r}") from e


def load_spec(path: str) -> ScenarioSpec:
    """Read a ScenarioSpec from a JSON config file."""
    with open(path, "r", encoding="utf-8") as f:
        return spec_from_dict(json.load(f))


def default_spec(kind: str, seed: int = 0, **overrides) -> ScenarioSpec:
    """Desk-scale defaults per scenario family."""
    base = {
        "static": dict(obstacle_count=8, pedestrian_count=0),
        "dynamic": dict(obstacle_count=4, pedestrian_count=4),
        "maze": dict(obstacle_count=6, pedestrian_count=0),
        "zigzag": dict(obstacle_count=0, pedestrian_count=0),
    }
    if kind not in base:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    params = {**base[kind], **overrides}
    return ScenarioSpec(kind=kind, seed=int(seed), **params)
