#!/usr/bin/env python3
"""Test GAE for the reward, cost and cost-square heads."""

import sys, os

import numpy as np
import pytest
from hypothesis import given, strategies as st

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from advantage import (
    EpisodeValues,
    build_advantage_batch,
    discount_cumsum,
    gae_square,
    gae_standard,
    square_advantage_k_step,
    square_td_errors,
    td_errors,
    td_lambda_targets,
)
from utils import DimensionError, DomainError


def exact_chain(costs, gamma, tail_value=0.0):
    """Cost values of a deterministic chain: V_t = c_t + gamma V_{t+1}."""
    values = np.zeros(len(costs) + 1)
    values[-1] = tail_value
    for t in reversed(range(len(costs))):
        values[t] = costs[t] + gamma * values[t + 1]
    return values


def brute_force_gae(deltas, dones, factor):
    n = len(deltas)
    out = np.zeros(n)
    for t in range(n):
        total = 0.0
        for l in range(n - t):
            total += factor ** l * deltas[t + l]
            if dones[t + l]:
                break
        out[t] = total
    return out


def random_batch(seed, n=12):
    rng = np.random.default_rng(seed)
    dones = np.zeros(n)
    dones[[3, 8, n - 1]] = 1.0
    terminals = np.zeros(n)
    terminals[3] = 1.0
    return {
        "costs": rng.uniform(0, 1, n),
        "cost_values": rng.uniform(0, 5, n),
        "square_values": rng.uniform(0, 20, n),
        "next_cost_values": rng.uniform(0, 5, n),
        "next_square_values": rng.uniform(0, 20, n),
        "dones": dones,
        "terminals": terminals,
    }


def test_td_error_values():
    deltas = td_errors([1.0, 2.0], [0.5, 1.0], [1.0, 3.0], 0.9, terminals=[0, 1])
    assert deltas == pytest.approx([1.0 + 0.9 - 0.5, 2.0 - 1.0])


def test_square_td_error_values():
    delta = square_td_errors([2.0], [0.0], [1.0], [3.0], [5.0], 0.5)
    assert delta[0] == pytest.approx(4.0 + 2 * 0.5 * 2.0 * 3.0 + 0.25 * 5.0 - 1.0)
    terminal = square_td_errors([2.0], [0.0], [1.0], [3.0], [5.0], 0.5, terminals=[1])
    assert terminal[0] == pytest.approx(4.0 - 1.0)


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
@pytest.mark.parametrize("terminal", [True, False])
def test_exact_heads_on_deterministic_chain_give_zero_advantages(gamma, terminal):
    costs = np.random.default_rng(0).uniform(0, 1, 25)
    v_c = exact_chain(costs, gamma, tail_value=0.0 if terminal else 3.7)
    s_c = v_c ** 2
    n = len(costs)
    dones = np.zeros(n)
    dones[-1] = 1.0
    terminals = dones if terminal else np.zeros(n)
    for lam in (0.0, 0.5, 0.97, 1.0):
        adv_c = gae_standard(costs, v_c[:-1], v_c[1:], dones, gamma, lam, terminals)
        adv_s = gae_square(costs, v_c[:-1], s_c[:-1], v_c[1:], s_c[1:], dones, gamma, lam, terminals)
        assert np.max(np.abs(adv_c)) < 1e-10
        assert np.max(np.abs(adv_s)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_square_gae_matches_nested_sum_oracle(seed, lam):
    gamma = 0.9
    b = random_batch(seed)
    deltas = square_td_errors(b["costs"], b["cost_values"], b["square_values"], b["next_cost_values"],
                              b["next_square_values"], gamma, b["terminals"])
    expected = brute_force_gae(deltas, b["dones"], gamma ** 2 * lam)
    got = gae_square(b["costs"], b["cost_values"], b["square_values"], b["next_cost_values"],
                     b["next_square_values"], b["dones"], gamma, lam, b["terminals"])
    assert np.max(np.abs(got - expected)) < 1e-10


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_standard_gae_matches_nested_sum_oracle(lam):
    gamma = 0.95
    b = random_batch(11)
    deltas = td_errors(b["costs"], b["cost_values"], b["next_cost_values"], gamma, b["terminals"])
    expected = brute_force_gae(deltas, b["dones"], gamma * lam)
    got = gae_standard(b["costs"], b["cost_values"], b["next_cost_values"], b["dones"], gamma, lam, b["terminals"])
    assert np.max(np.abs(got - expected)) < 1e-10


def test_lambda_zero_is_one_step_td():
    b = random_batch(2)
    deltas = td_errors(b["costs"], b["cost_values"], b["next_cost_values"], 0.9)
    got = gae_standard(b["costs"], b["cost_values"], b["next_cost_values"], b["dones"], 0.9, 0.0)
    assert np.allclose(got, deltas)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0.0, 1.0))
def test_discount_cumsum_without_dones_matches_oracle(values, factor):
    deltas = np.asarray(values)
    dones = np.zeros(len(deltas))
    expected = brute_force_gae(deltas, dones, factor)
    assert np.allclose(discount_cumsum(deltas, dones, factor), expected, atol=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_k_step_square_advantage_identity(k):
    gamma, t = 0.9, 2
    rng = np.random.default_rng(k)
    costs = rng.uniform(0, 1, 12)
    v_c = exact_chain(costs, gamma, tail_value=1.3)
    s_c = rng.uniform(0, 10, len(costs) + 1)
    deltas = square_td_errors(costs, v_c[:-1], s_c[:-1], v_c[1:], s_c[1:], gamma)
    partial = float(np.dot(gamma ** np.arange(k), costs[t:t + k]))
    expected = (partial ** 2 + 2 * gamma ** k * partial * v_c[t + k]
                + gamma ** (2 * k) * s_c[t + k] - s_c[t])
    assert square_advantage_k_step(deltas, gamma, t, k) == pytest.approx(expected, abs=1e-10)
    with pytest.raises(DimensionError):
        square_advantage_k_step(deltas, gamma, 10, 5)


def test_invalid_rates_and_negative_squares():
    with pytest.raises(DomainError):
        gae_standard([1.0], [0.0], [0.0], [1], 1.5, 0.9)
    with pytest.raises(DomainError):
        gae_standard([1.0], [0.0], [0.0], [1], 0.9, -0.1)
    with pytest.raises(DomainError):
        gae_square([1.0], [0.0], [-1.0], [0.0], [0.0], [1], 0.9, 0.9)
    with pytest.raises(DimensionError):
        td_errors([1.0, 2.0], [0.0], [0.0], 0.9)


def test_td_lambda_targets_floor():
    assert np.allclose(td_lambda_targets([1.0, 1.0], [-3.0, 1.0], floor=True), [0.0, 2.0])


def _episode(n, terminal, seed, tail=0.0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=n + 1)
    cost_values = rng.uniform(0, 2, n + 1)
    square_values = rng.uniform(0, 4, n + 1)
    values[-1] = cost_values[-1] = square_values[-1] = tail
    return EpisodeValues(rewards=rng.normal(size=n), costs=rng.uniform(0, 1, n), values=values,
                         cost_values=cost_values, square_values=square_values, terminal=terminal)


def test_build_batch_concatenates_and_marks_starts():
    episodes = [_episode(4, True, 0), _episode(6, False, 1)]
    batch = build_advantage_batch(episodes, 0.9, 0.97)
    assert len(batch) == 10
    assert batch.episode_starts == [0, 4]
    assert np.all(batch.target_square >= 0.0)
    assert np.allclose(batch.target_value, np.concatenate([e.values[:-1] for e in episodes]) + batch.adv_reward)


def test_terminal_episode_ignores_bootstrap_values():
    a = build_advantage_batch([_episode(5, True, 3, tail=0.0)], 0.9, 0.97)
    b = build_advantage_batch([_episode(5, True, 3, tail=1e6)], 0.9, 0.97)
    assert np.allclose(a.adv_reward, b.adv_reward)
    assert np.allclose(a.adv_square, b.adv_square)
    c = build_advantage_batch([_episode(5, False, 3, tail=1e6)], 0.9, 0.97)
    assert not np.allclose(a.adv_reward, c.adv_reward)


def test_build_batch_checks_value_lengths():
    episode = _episode(4, False, 0)
    episode.values = episode.values[:-1]
    with pytest.raises(DimensionError):
        build_advantage_batch([episode], 0.9, 0.97)
    with pytest.raises(DimensionError):
        build_advantage_batch([], 0.9, 0.97)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
