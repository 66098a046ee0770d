"""Episode evaluation and result recording."""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from cvar_math import cvar_gaussian
from diffnet import GaussianPolicy, RunningNorm
from utils import DomainError

logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    """Record of a single step in an episode."""
    step_num: int
    reward: float
    cost: float
    cv: int


@dataclass
class EpisodeRecord:
    episode_return: float
    cv_count: int
    length: int
    cost_sum: float = 0.0

    @property
    def score(self) -> float:
        return episode_score(self.episode_return, self.cv_count)

    @property
    def cv_rate(self) -> float:
        return self.cv_count / self.length if self.length else 0.0


def episode_score(total_reward: float, total_cv: float) -> float:
    """Sum of rewards divided by (1 + number of constraint violations)."""
    if total_cv < 0:
        raise DomainError(f"CV count must be nonnegative, got {total_cv}")
    return total_reward / (1.0 + total_cv)


def cv_rate_cvar(rates: Sequence[float], alpha: float) -> float:
    """Gaussian CVaR of per-episode CV rates (population std)."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.size == 0:
        raise DomainError("no episodes to take the CVaR over")
    return cvar_gaussian(float(rates.mean()), float(rates.std()), alpha)


def record_episode(rewards: Sequence[float], costs: Sequence[float],
                   cvs: Sequence[int]) -> EpisodeRecord:
    return EpisodeRecord(
        episode_return=float(np.sum(rewards)),
        cv_count=int(np.sum(cvs)),
        length=len(rewards),
        cost_sum=float(np.sum(costs)),
    )


def summarize_episodes(records: Sequence[EpisodeRecord], alpha: float) -> Dict[str, float]:
    if not records:
        raise DomainError("cannot summarize zero episodes")
    rates = [r.cv_rate for r in records]
    return {
        "episodes": len(records),
        "mean_return": float(np.mean([r.episode_return for r in records])),
        "mean_cv_count": float(np.mean([r.cv_count for r in records])),
        "mean_cv_rate": float(np.mean(rates)),
        "cvar_cv_rate": cv_rate_cvar(rates, alpha),
        "score": float(np.mean([r.score for r in records])),
        "mean_cost": float(np.mean([r.cost_sum for r in records])),
    }


class EpisodeEvaluator:
    """Evaluates and records one episode."""

    def __init__(self, max_steps: int):
        self.max_steps = max_steps
        self.steps: List[StepRecord] = []

    def record_step(self, step_num: int, reward: float, cost: float, cv: int):
        if len(self.steps) >= self.max_steps:
            raise DomainError(f"episode already has {self.max_steps} steps, cannot record step {step_num}")
        self.steps.append(StepRecord(step_num, float(reward), float(cost), int(cv)))

    def generate_results(self) -> EpisodeRecord:
        return record_episode(
            [s.reward for s in self.steps],
            [s.cost for s in self.steps],
            [s.cv for s in self.steps],
        )

    def get_summary_stats(self) -> Dict[str, Any]:
        if not self.steps:
            return {}
        record = self.generate_results()
        return {**asdict(record), "score": record.score, "cv_rate": record.cv_rate,
                "truncated": record.length >= self.max_steps}


def evaluate_policy(env, policy: GaussianPolicy, normalizer: Optional[RunningNorm],
                    episodes: int, horizon: int, seed: int) -> List[EpisodeRecord]:
    """Roll out the mean action for `episodes` episodes; episode i resets with seed + i."""
    if episodes <= 0:
        raise DomainError(f"episode count must be positive, got {episodes}")
    records = []
    for i in range(episodes):
        obs = env.reset(seed + i)
        evaluator = EpisodeEvaluator(horizon)
        for t in range(horizon):
            state = obs.as_array() if normalizer is None else normalizer(obs.as_array())
            obs, reward, cost, done = env.step(policy.act(state))
            evaluator.record_step(t, reward, cost, env.constraint_violation())
            if done:
                break
        record = evaluator.generate_results()
        logger.debug(f"eval episode {i}: return={record.episode_return:.3f}, CVs={record.cv_count}")
        records.append(record)
    return records
