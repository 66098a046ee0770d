#!/usr/bin/env python3
"""Test the 2D hazard navigation environment."""

import itertools
import math
import sys, os

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from env_nav2d import EnvConfig, Nav2DEnv, hazard_cost, lidar_scan
from utils import ConfigError


def test_reset_is_deterministic():
    env = Nav2DEnv()
    first = env.reset(7).as_array()
    second = env.reset(7).as_array()
    assert np.array_equal(first, second)
    assert not np.array_equal(first, env.reset(8).as_array())


def test_default_layout_is_separated():
    env = Nav2DEnv()
    env.reset(0)
    state = env.state
    assert len(state.hazard_centers) == 8
    points = list(state.hazard_centers) + [state.goal_position, state.robot_position]
    for a, b in itertools.combinations(points, 2):
        assert np.linalg.norm(a - b) >= env.config.separation
    for p in points:
        assert np.all(np.abs(p) <= env.config.arena_half_width)


def test_observation_layout():
    config = EnvConfig(n_lidar=12)
    obs = Nav2DEnv(config).reset(3)
    vec = obs.as_array()
    assert vec.shape == (config.observation_dim,) == (17,)
    assert np.linalg.norm(obs.goal_direction) == pytest.approx(1.0)
    assert np.all((obs.lidar >= 0) & (obs.lidar <= config.lidar_range))


def test_no_hazards_lidar_at_max_range():
    obs = Nav2DEnv(EnvConfig(n_hazards=0)).reset(1)
    assert np.all(obs.lidar == EnvConfig().lidar_range)


def test_crowded_arena_rejected():
    with pytest.raises(ConfigError, match="crowded"):
        Nav2DEnv(EnvConfig(arena_half_width=0.5, n_hazards=40)).reset(0)


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        Nav2DEnv(EnvConfig(hazard_radius=0.0))
    with pytest.raises(ConfigError):
        Nav2DEnv(EnvConfig(max_steps=0))


def test_cost_on_boundary_is_half():
    config = EnvConfig()
    assert hazard_cost(config.hazard_radius, config) == pytest.approx(0.5)


def test_cost_strictly_inside_unit_interval_and_decreasing():
    config = EnvConfig()
    distances = np.linspace(0.0, 3.0, 50)
    costs = [hazard_cost(d, config) for d in distances]
    assert all(0.0 < c < 1.0 for c in costs)
    assert all(a > b for a, b in zip(costs, costs[1:]))


def test_zero_action_gives_zero_reward():
    env = Nav2DEnv()
    env.reset(2)
    _, reward, cost, done = env.step(np.zeros(2))
    assert reward == 0.0
    assert 0.0 < cost < 1.0
    assert not done


def test_goal_bonus_and_respawn():
    env = Nav2DEnv(EnvConfig(n_hazards=0))
    env.reset(4)
    state = env.state
    state.robot_position = np.zeros(2)
    state.goal_position = np.array([0.05, 0.0])
    old_goal = state.goal_position.copy()
    _, reward, _, _ = env.step(np.array([0.5, 0.0]))
    # moved 0.05 onto the goal: distance gain 0.05 plus the bonus
    assert reward == pytest.approx(0.05 + 1.0)
    assert not np.array_equal(env.state.goal_position, old_goal)


def test_actions_are_clipped_and_position_stays_in_arena():
    env = Nav2DEnv(EnvConfig(n_hazards=0, max_steps=200))
    env.reset(5)
    for _ in range(100):
        _, _, _, done = env.step(np.array([50.0, 50.0]))
        assert np.all(np.abs(env.state.robot_position) <= env.config.arena_half_width)
        assert np.all(np.abs(env.state.robot_velocity) <= env.config.max_speed)
        if done:
            break


def test_rewards_telescope_without_goal_reach():
    env = Nav2DEnv(EnvConfig(n_hazards=0))
    obs = env.reset(6)
    start = obs.goal_distance
    # head away from the goal so it is never reached
    away = -obs.goal_direction
    total = 0.0
    for _ in range(5):
        obs, reward, _, _ = env.step(away)
        total += reward
    assert total == pytest.approx(start - obs.goal_distance)


def test_done_at_max_steps_then_step_raises():
    env = Nav2DEnv(EnvConfig(max_steps=3))
    env.reset(0)
    dones = [env.step(np.zeros(2))[3] for _ in range(3)]
    assert dones == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(np.zeros(2))


def test_step_before_reset_raises():
    with pytest.raises(RuntimeError):
        Nav2DEnv().step(np.zeros(2))


def test_constraint_violation_is_strict():
    env = Nav2DEnv(EnvConfig(n_hazards=1))
    env.reset(0)
    env.state.hazard_centers = [np.zeros(2)]
    env.state.robot_position = np.zeros(2)
    assert env.constraint_violation() == 1
    env.state.robot_position = np.array([env.config.hazard_radius, 0.0])
    assert env.constraint_violation() == 0
    env.state.robot_position = np.array([0.29, 0.0])
    assert env.constraint_violation() == 1
    assert not env.is_terminal()


def test_no_hazards_never_violates():
    env = Nav2DEnv(EnvConfig(n_hazards=0))
    env.reset(0)
    assert env.constraint_violation() == 0


def test_same_seed_and_actions_replay_identically():
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, size=(40, 2))

    def rollout():
        env = Nav2DEnv()
        out = [env.reset(11).as_array()]
        for a in actions:
            obs, reward, cost, _ = env.step(a)
            out.append(np.concatenate([obs.as_array(), [reward, cost]]))
        return np.concatenate(out)

    assert np.array_equal(rollout(), rollout())


def test_lidar_sector_reports_surface_distance():
    config = EnvConfig(n_lidar=4)
    scan = lidar_scan(np.zeros(2), [np.array([1.0, 0.1])], config)
    assert scan[0] == pytest.approx(math.hypot(1.0, 0.1) - config.hazard_radius)
    assert np.all(scan[1:] == config.lidar_range)
