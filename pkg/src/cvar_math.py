"""
Gaussian CVaR of the discounted cost sum and the surrogates built on it.

The cost sum is modelled as N(J_C, J_S - J_C^2), which turns CVaR_alpha into
J_C + phi(Phi^-1(alpha)) / alpha * sigma. The surrogates below estimate J_C and
J_S for a candidate policy from data collected under the current one.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from advantage import AdvantageBatch, EpisodeValues
from diffnet import DTYPE, GaussianPolicy, grad_scalar, log_prob
from utils import ConfigError, DimensionError, DomainError, NonFiniteError

logger = logging.getLogger(__name__)

DEFAULT_VAR_FLOOR = 1e-8
SQUARE_WEIGHTINGS = ("doubly-discounted", "uniform")
CONSTRAINT_MODES = ("cvar", "expectation")


def normal_cdf(x):
    return ndtr(x)


def normal_pdf(x):
    return norm.pdf(x)


def normal_quantile(p: float) -> float:
    """Standard normal quantile, refined by one Newton step on Phi."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile probability must be in (0, 1), got {p}")
    x = float(ndtri(p))
    return x - (float(normal_cdf(x)) - p) / float(normal_pdf(x))


def cvar_coefficient(alpha: float) -> float:
    """phi(Phi^-1(alpha)) / alpha; zero at alpha = 1."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"risk level alpha must be in (0, 1], got {alpha}")
    if alpha == 1.0:
        return 0.0
    return float(normal_pdf(normal_quantile(alpha))) / alpha


def cvar_gaussian(mu: float, sigma: float, alpha: float) -> float:
    if sigma < 0:
        raise DomainError(f"sigma must be nonnegative, got {sigma}")
    return mu + sigma * cvar_coefficient(alpha)


@dataclass
class RiskSpec:
    alpha: float = 0.125
    limit: float = 0.025
    gamma: float = 0.99
    var_floor: float = DEFAULT_VAR_FLOOR
    square_weighting: str = "doubly-discounted"

    @property
    def threshold(self) -> float:
        """Constraint threshold on the discounted cost sum, d / (1 - gamma)."""
        return self.limit / (1.0 - self.gamma)

    @property
    def coefficient(self) -> float:
        return cvar_coefficient(self.alpha)

    def validate(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"risk.alpha must be in (0, 1], got {self.alpha}")
        if self.limit < 0:
            raise ConfigError(f"risk.limit must be >= 0, got {self.limit}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"risk.gamma must be in [0, 1), got {self.gamma}")
        if not self.var_floor > 0:
            raise ConfigError(f"risk.var_floor must be > 0, got {self.var_floor}")
        if self.square_weighting not in SQUARE_WEIGHTINGS:
            raise ConfigError(f"risk.square_weighting must be one of {SQUARE_WEIGHTINGS}")


@dataclass
class CostStats:
    J_C: float
    J_S: float
    var_floor: float = DEFAULT_VAR_FLOOR

    @property
    def variance(self) -> float:
        return max(self.J_S - self.J_C ** 2, self.var_floor)

    @property
    def sigma_C(self) -> float:
        return float(np.sqrt(self.variance))


def estimate_cost_stats(episodes: Sequence[EpisodeValues], gamma: float,
                        var_floor: float = DEFAULT_VAR_FLOOR) -> CostStats:
    """Empirical J_C and J_S from episode cost sums, bootstrapping truncated episodes.

    A truncated episode adds gamma^T V_C(s_T) to G and, for G^2, the cross term
    2 gamma^T G_{0:T} V_C(s_T) plus gamma^{2T} S_C(s_T).
    """
    if not episodes:
        raise DimensionError("cannot estimate cost statistics from an empty batch")
    firsts, seconds = [], []
    for ep in episodes:
        costs = np.asarray(ep.costs, dtype=np.float64)
        horizon = len(costs)
        partial = float(np.dot(gamma ** np.arange(horizon), costs))
        if ep.terminal:
            g, g2 = partial, partial ** 2
        else:
            tail_value = float(ep.cost_values[-1])
            tail_square = float(ep.square_values[-1])
            discount = gamma ** horizon
            g = partial + discount * tail_value
            g2 = partial ** 2 + 2.0 * discount * partial * tail_value + discount ** 2 * tail_square
        firsts.append(g)
        seconds.append(g2)
    return CostStats(J_C=float(np.mean(firsts)), J_S=max(float(np.mean(seconds)), 0.0),
                     var_floor=var_floor)


def standardize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean()) / (x.std() + 1e-8)


def doubly_discounted_weights(episode_starts: Sequence[int], n: int, gamma: float) -> np.ndarray:
    """gamma^(2t) (1 - gamma^2) for step t of each episode, normalized over the batch."""
    steps = np.zeros(n)
    bounds = list(episode_starts) + [n]
    for start, end in zip(bounds[:-1], bounds[1:]):
        steps[start:end] = np.arange(end - start)
    weights = gamma ** (2.0 * steps) * (1.0 - gamma ** 2)
    return weights / weights.sum()


@dataclass
class PolicyBatch:
    """Everything the surrogates need, frozen at the pre-update policy."""

    states: torch.Tensor
    actions: torch.Tensor
    old_log_probs: torch.Tensor
    adv_reward: torch.Tensor
    adv_cost: torch.Tensor
    adv_square: torch.Tensor
    weights: torch.Tensor
    square_weights: torch.Tensor

    def __len__(self) -> int:
        return self.states.shape[0]


def build_policy_batch(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray,
                       advantages: AdvantageBatch, gamma: float,
                       square_weighting: str = "doubly-discounted") -> PolicyBatch:
    """Standardize the reward advantage; center (never rescale) the cost and square ones."""
    n = len(advantages)
    if states.shape[0] != n or actions.shape[0] != n:
        raise DimensionError(f"{states.shape[0]} states, {actions.shape[0]} actions, {n} advantages")
    weights = np.full(n, 1.0 / n)
    if square_weighting == "doubly-discounted":
        square_weights = doubly_discounted_weights(advantages.episode_starts, n, gamma)
    elif square_weighting == "uniform":
        square_weights = weights
    else:
        raise ConfigError(f"unknown square weighting '{square_weighting}'")

    adv_cost = advantages.adv_cost - np.dot(weights, advantages.adv_cost)
    adv_square = advantages.adv_square - np.dot(square_weights, advantages.adv_square)

    states_t = torch.as_tensor(states, dtype=DTYPE)
    actions_t = torch.as_tensor(actions, dtype=DTYPE)
    with torch.no_grad():
        old_log_probs = log_prob(policy, states_t, actions_t)

    def t(x):
        return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)

    return PolicyBatch(
        states=states_t,
        actions=actions_t,
        old_log_probs=old_log_probs,
        adv_reward=t(standardize(advantages.adv_reward)),
        adv_cost=t(adv_cost),
        adv_square=t(adv_square),
        weights=t(weights),
        square_weights=t(square_weights),
    )


def probability_ratio(batch: PolicyBatch, policy: GaussianPolicy, params: torch.Tensor) -> torch.Tensor:
    ratio = torch.exp(log_prob(policy, batch.states, batch.actions, params) - batch.old_log_probs)
    if not bool(torch.isfinite(ratio).all()):
        raise NonFiniteError("probability ratio", {"max_log_ratio": float(
            (log_prob(policy, batch.states, batch.actions, params) - batch.old_log_probs).max())})
    return ratio


def policy_objective(batch: PolicyBatch, policy_old: GaussianPolicy,
                     params: torch.Tensor) -> torch.Tensor:
    return torch.dot(batch.weights, probability_ratio(batch, policy_old, params) * batch.adv_reward)


def surrogate_moments(batch: PolicyBatch, policy_old: GaussianPolicy, params: torch.Tensor,
                      stats: CostStats, gamma: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """(J_C, J_S) of the candidate policy estimated from the old policy's batch."""
    ratio = probability_ratio(batch, policy_old, params)
    j_c = stats.J_C + torch.dot(batch.weights, ratio * batch.adv_cost) / (1.0 - gamma)
    j_s = stats.J_S + torch.dot(batch.square_weights, ratio * batch.adv_square) / (1.0 - gamma ** 2)
    return j_c, j_s


def cvar_surrogate_value(batch: PolicyBatch, policy_old: GaussianPolicy, params: torch.Tensor,
                         stats: CostStats, risk: RiskSpec) -> torch.Tensor:
    j_c, j_s = surrogate_moments(batch, policy_old, params, stats, risk.gamma)
    variance = torch.clamp(j_s - j_c ** 2, min=risk.var_floor)
    return j_c + risk.coefficient * torch.sqrt(variance)


def expectation_surrogate_value(batch: PolicyBatch, policy_old: GaussianPolicy,
                                params: torch.Tensor, stats: CostStats,
                                risk: RiskSpec) -> torch.Tensor:
    j_c, _ = surrogate_moments(batch, policy_old, params, stats, risk.gamma)
    return j_c


def constraint_value(mode: str, batch: PolicyBatch, policy_old: GaussianPolicy,
                     params: torch.Tensor, stats: CostStats, risk: RiskSpec) -> torch.Tensor:
    if mode == "cvar":
        return cvar_surrogate_value(batch, policy_old, params, stats, risk)
    if mode == "expectation":
        return expectation_surrogate_value(batch, policy_old, params, stats, risk)
    raise ConfigError(f"constraint mode must be one of {CONSTRAINT_MODES}, got '{mode}'")


def _value_and_grad(fn, params: torch.Tensor) -> Tuple[float, torch.Tensor]:
    with torch.no_grad():
        value = float(fn(params.detach()))
    return value, grad_scalar(fn, params)


def cvar_surrogate(batch: PolicyBatch, policy_old: GaussianPolicy,
                   params: Optional[torch.Tensor], stats: CostStats,
                   risk: RiskSpec) -> Tuple[float, torch.Tensor]:
    """Surrogate CVaR of the candidate policy and its gradient in policy parameters."""
    params = policy_old.params if params is None else params
    return _value_and_grad(lambda p: cvar_surrogate_value(batch, policy_old, p, stats, risk), params)


def expectation_surrogate(batch: PolicyBatch, policy_old: GaussianPolicy,
                          params: Optional[torch.Tensor], stats: CostStats,
                          risk: RiskSpec) -> Tuple[float, torch.Tensor]:
    params = policy_old.params if params is None else params
    return _value_and_grad(lambda p: expectation_surrogate_value(batch, policy_old, p, stats, risk), params)
