"""
2D goal navigation with circular hazards.

A point mass driven by velocity commands moves inside a square arena. Reaching
the goal pays a bonus and respawns the goal; approaching a hazard raises a
sigmoid cost. Everything random is drawn from a generator seeded at reset, so a
seed plus an action sequence fully determines the trajectory.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from utils import ConfigError

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 10000


@dataclass
class EnvConfig:
    arena_half_width: float = 2.0
    n_hazards: int = 8
    hazard_radius: float = 0.3
    goal_threshold: float = 0.3
    cost_weight: float = 10.0
    max_steps: int = 1000
    n_lidar: int = 16
    dt: float = 0.1
    max_speed: float = 1.0
    lidar_range: float = 3.0

    @property
    def separation(self) -> float:
        """Minimum spacing between any two spawned objects."""
        return self.hazard_radius + self.goal_threshold

    @property
    def observation_dim(self) -> int:
        return 5 + self.n_lidar

    def validate(self) -> None:
        for name in ("arena_half_width", "hazard_radius", "goal_threshold",
                     "dt", "max_speed", "lidar_range"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"env.{name} must be > 0, got {getattr(self, name)}")
        if self.n_hazards < 0:
            raise ConfigError(f"env.n_hazards must be >= 0, got {self.n_hazards}")
        if self.max_steps < 1:
            raise ConfigError(f"env.max_steps must be >= 1, got {self.max_steps}")
        if self.n_lidar < 1:
            raise ConfigError(f"env.n_lidar must be >= 1, got {self.n_lidar}")
        if self.cost_weight < 0:
            raise ConfigError(f"env.cost_weight must be >= 0, got {self.cost_weight}")


@dataclass
class EnvState:
    robot_position: np.ndarray
    robot_velocity: np.ndarray
    hazard_centers: List[np.ndarray] = field(default_factory=list)
    goal_position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    step_count: int = 0


@dataclass
class Observation:
    goal_direction: np.ndarray
    goal_distance: float
    velocity: np.ndarray
    lidar: np.ndarray

    def as_array(self) -> np.ndarray:
        """Flat float64 vector: goal direction, goal distance, velocity, lidar."""
        return np.concatenate([
            self.goal_direction,
            [self.goal_distance],
            self.velocity,
            self.lidar,
        ]).astype(np.float64)


def hazard_distance(state: EnvState) -> float:
    """Distance from the robot to the nearest hazard center (inf without hazards)."""
    if not state.hazard_centers:
        return math.inf
    centers = np.asarray(state.hazard_centers)
    return float(np.min(np.linalg.norm(centers - state.robot_position, axis=1)))


def hazard_cost(distance: float, config: EnvConfig) -> float:
    return float(expit(config.cost_weight * (config.hazard_radius - distance)))


def constraint_violation(state: EnvState, config: EnvConfig) -> int:
    """1 iff the robot is strictly inside a hazard."""
    return int(hazard_distance(state) < config.hazard_radius)


def lidar_scan(position: np.ndarray, hazard_centers: List[np.ndarray],
               config: EnvConfig) -> np.ndarray:
    """Per-sector distance to the nearest hazard surface, capped at lidar_range."""
    scan = np.full(config.n_lidar, config.lidar_range, dtype=np.float64)
    sector_width = 2.0 * math.pi / config.n_lidar
    for center in hazard_centers:
        offset = center - position
        angle = math.atan2(offset[1], offset[0]) % (2.0 * math.pi)
        sector = min(int(angle // sector_width), config.n_lidar - 1)
        surface = max(0.0, float(np.linalg.norm(offset)) - config.hazard_radius)
        scan[sector] = min(scan[sector], surface)
    return scan


class Nav2DEnv:
    """Seedable point-mass goal navigation environment."""

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.state: Optional[EnvState] = None
        self._rng: Optional[np.random.Generator] = None
        self._budget = 0

    @property
    def observation_dim(self) -> int:
        return self.config.observation_dim

    @property
    def action_dim(self) -> int:
        return 2

    def reset(self, seed: int) -> Observation:
        cfg = self.config
        self._rng = np.random.default_rng(seed)
        self._budget = MAX_PLACEMENT_ATTEMPTS

        placed: List[np.ndarray] = []
        hazards = []
        for _ in range(cfg.n_hazards):
            center = self._place(placed)
            hazards.append(center)
            placed.append(center)
        goal = self._place(placed)
        placed.append(goal)
        robot = self._place(placed)

        self.state = EnvState(
            robot_position=robot,
            robot_velocity=np.zeros(2),
            hazard_centers=hazards,
            goal_position=goal,
            step_count=0,
        )
        logger.debug(f"reset(seed={seed}): robot={robot}, goal={goal}, hazards={len(hazards)}")
        return self.observe()

    def _place(self, occupied: List[np.ndarray]) -> np.ndarray:
        """Rejection-sample a point at least `separation` from every occupied point."""
        cfg = self.config
        while self._budget > 0:
            self._budget -= 1
            candidate = self._rng.uniform(-cfg.arena_half_width, cfg.arena_half_width, size=2)
            if all(np.linalg.norm(candidate - p) >= cfg.separation for p in occupied):
                return candidate
        raise ConfigError(
            f"arena too crowded: could not place objects within {MAX_PLACEMENT_ATTEMPTS} attempts "
            f"(half width {cfg.arena_half_width}, {cfg.n_hazards} hazards, separation {cfg.separation})"
        )

    def observe(self) -> Observation:
        state = self._require_state()
        offset = state.goal_position - state.robot_position
        distance = float(np.linalg.norm(offset))
        direction = offset / distance if distance > 0 else np.zeros(2)
        return Observation(
            goal_direction=direction,
            goal_distance=distance,
            velocity=state.robot_velocity.copy(),
            lidar=lidar_scan(state.robot_position, state.hazard_centers, self.config),
        )

    def step(self, action) -> Tuple[Observation, float, float, bool]:
        cfg = self.config
        state = self._require_state()
        if state.step_count >= cfg.max_steps:
            raise RuntimeError("step() called on a finished episode; call reset() first")

        action = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        before = float(np.linalg.norm(state.goal_position - state.robot_position))

        state.robot_velocity = action * cfg.max_speed
        state.robot_position = np.clip(
            state.robot_position + state.robot_velocity * cfg.dt,
            -cfg.arena_half_width, cfg.arena_half_width,
        )
        state.step_count += 1

        after = float(np.linalg.norm(state.goal_position - state.robot_position))
        reached = after <= cfg.goal_threshold
        reward = before - after + (1.0 if reached else 0.0)
        cost = hazard_cost(hazard_distance(state), cfg)

        if reached:
            self._respawn_goal()

        done = state.step_count >= cfg.max_steps
        return self.observe(), reward, cost, done

    def _respawn_goal(self) -> None:
        state = self.state
        self._budget = MAX_PLACEMENT_ATTEMPTS
        state.goal_position = self._place(list(state.hazard_centers) + [state.robot_position])
        logger.debug(f"goal respawned at {state.goal_position} (step {state.step_count})")

    def constraint_violation(self) -> int:
        return constraint_violation(self._require_state(), self.config)

    def is_terminal(self) -> bool:
        """Navigation episodes only end on the time limit."""
        return False

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise RuntimeError("environment used before reset()")
        return self.state
