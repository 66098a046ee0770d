"""
GAE and TD(lambda) targets for the reward, cost and cost-square heads.

Arrays are flat over the whole batch. `dones[t] = 1` marks the last step of an
episode (accumulation stops there); `terminals[t] = 1` additionally marks that
the episode really ended, so the next-state heads contribute nothing. Episodes
cut by the time limit keep `terminals[t] = 0` and bootstrap from the heads.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from utils import DimensionError, DomainError


@dataclass
class AdvantageBatch:
    adv_reward: np.ndarray
    adv_cost: np.ndarray
    adv_square: np.ndarray
    target_value: np.ndarray
    target_cost_value: np.ndarray
    target_square: np.ndarray
    episode_starts: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.adv_reward)


@dataclass
class EpisodeValues:
    """One episode's signals plus head predictions at s_0..s_T (T+1 entries)."""

    rewards: np.ndarray
    costs: np.ndarray
    values: np.ndarray
    cost_values: np.ndarray
    square_values: np.ndarray
    terminal: bool = False


def _as_arrays(*arrays) -> List[np.ndarray]:
    out = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    n = len(out[0])
    for a in out[1:]:
        if len(a) != n:
            raise DimensionError(f"mismatched lengths: {[len(x) for x in out]}")
    return out


def _check_rates(gamma: float, lam: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must be in [0, 1], got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must be in [0, 1], got {lam}")


def discount_cumsum(deltas, dones, factor: float) -> np.ndarray:
    """A_t = delta_t + factor * A_{t+1}, restarted after every done."""
    deltas, dones = _as_arrays(deltas, dones)
    out = np.zeros_like(deltas)
    running = 0.0
    for t in reversed(range(len(deltas))):
        if dones[t]:
            running = 0.0
        running = deltas[t] + factor * running
        out[t] = running
    return out


def td_errors(rewards, values, next_values, gamma: float, terminals=None) -> np.ndarray:
    rewards, values, next_values = _as_arrays(rewards, values, next_values)
    continuing = 1.0 - (np.zeros_like(rewards) if terminals is None else _as_arrays(terminals, rewards)[0])
    return rewards + gamma * next_values * continuing - values


def square_td_errors(costs, cost_values, square_values, next_cost_values, next_square_values,
                     gamma: float, terminals=None) -> np.ndarray:
    """delta^S_t = c_t^2 + 2 gamma c_t V_C(s_{t+1}) + gamma^2 S_C(s_{t+1}) - S_C(s_t)."""
    costs, cost_values, square_values, next_cost_values, next_square_values = _as_arrays(
        costs, cost_values, square_values, next_cost_values, next_square_values)
    continuing = 1.0 - (np.zeros_like(costs) if terminals is None else _as_arrays(terminals, costs)[0])
    return (costs ** 2
            + 2.0 * gamma * costs * next_cost_values * continuing
            + gamma ** 2 * next_square_values * continuing
            - square_values)


def gae_standard(rewards, values, next_values, dones, gamma: float, lam: float,
                 terminals=None) -> np.ndarray:
    _check_rates(gamma, lam)
    rewards, values, next_values, dones = _as_arrays(rewards, values, next_values, dones)
    deltas = td_errors(rewards, values, next_values, gamma, terminals)
    return discount_cumsum(deltas, dones, gamma * lam)


def gae_square(costs, cost_values, square_values, next_cost_values, next_square_values,
               dones, gamma: float, lam: float, terminals=None) -> np.ndarray:
    """Square-function GAE; accumulates with base gamma^2 * lambda."""
    _check_rates(gamma, lam)
    square_values = np.asarray(square_values, dtype=np.float64)
    if np.any(square_values < 0) or np.any(np.asarray(next_square_values) < 0):
        raise DomainError("cost-square values must be nonnegative")
    deltas = square_td_errors(costs, cost_values, square_values, next_cost_values,
                              next_square_values, gamma, terminals)
    return discount_cumsum(deltas, _as_arrays(dones, deltas)[0], gamma ** 2 * lam)


def square_advantage_k_step(square_deltas, gamma: float, t: int, k: int) -> float:
    """sum_{i=t}^{t+k-1} gamma^(2(i-t)) delta^S_i."""
    deltas = np.asarray(square_deltas, dtype=np.float64)
    if t < 0 or k < 1 or t + k > len(deltas):
        raise DimensionError(f"window [{t}, {t + k}) outside {len(deltas)} deltas")
    weights = gamma ** (2.0 * np.arange(k))
    return float(np.dot(weights, deltas[t:t + k]))


def td_lambda_targets(values, advantages, floor: bool = False) -> np.ndarray:
    values, advantages = _as_arrays(values, advantages)
    targets = values + advantages
    if floor:
        targets = np.maximum(targets, 0.0)
    return targets


def build_advantage_batch(episodes: Sequence[EpisodeValues], gamma: float,
                          lam: float) -> AdvantageBatch:
    """Concatenate episodes and compute all three advantages and targets."""
    if not episodes:
        raise DimensionError("no episodes to compute advantages for")

    columns = {k: [] for k in ("r", "c", "v", "v1", "vc", "vc1", "s", "s1", "done", "term")}
    starts = []
    offset = 0
    for ep in episodes:
        rewards, costs = _as_arrays(ep.rewards, ep.costs)
        n = len(rewards)
        for name, arr in (("values", ep.values), ("cost_values", ep.cost_values),
                          ("square_values", ep.square_values)):
            if len(arr) != n + 1:
                raise DimensionError(f"{name} needs {n + 1} entries (s_0..s_T), got {len(arr)}")
        starts.append(offset)
        offset += n
        done = np.zeros(n)
        done[-1] = 1.0
        term = np.zeros(n)
        term[-1] = 1.0 if ep.terminal else 0.0
        columns["r"].append(rewards)
        columns["c"].append(costs)
        columns["v"].append(np.asarray(ep.values[:-1], dtype=np.float64))
        columns["v1"].append(np.asarray(ep.values[1:], dtype=np.float64))
        columns["vc"].append(np.asarray(ep.cost_values[:-1], dtype=np.float64))
        columns["vc1"].append(np.asarray(ep.cost_values[1:], dtype=np.float64))
        columns["s"].append(np.asarray(ep.square_values[:-1], dtype=np.float64))
        columns["s1"].append(np.asarray(ep.square_values[1:], dtype=np.float64))
        columns["done"].append(done)
        columns["term"].append(term)
    cols = {k: np.concatenate(v) for k, v in columns.items()}

    adv_reward = gae_standard(cols["r"], cols["v"], cols["v1"], cols["done"], gamma, lam, cols["term"])
    adv_cost = gae_standard(cols["c"], cols["vc"], cols["vc1"], cols["done"], gamma, lam, cols["term"])
    adv_square = gae_square(cols["c"], cols["vc"], cols["s"], cols["vc1"], cols["s1"],
                            cols["done"], gamma, lam, cols["term"])
    return AdvantageBatch(
        adv_reward=adv_reward,
        adv_cost=adv_cost,
        adv_square=adv_square,
        target_value=td_lambda_targets(cols["v"], adv_reward),
        target_cost_value=td_lambda_targets(cols["vc"], adv_cost),
        target_square=td_lambda_targets(cols["s"], adv_square, floor=True),
        episode_starts=starts,
    )
