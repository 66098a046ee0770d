"""
CVaR-constrained trust-region training loop.

Each epoch collects E episodes with the current stochastic policy, computes GAE
advantages and TD(lambda) targets for the reward, cost and cost-square heads, takes
one trust-region policy step and then regresses the three heads on the pre-update
targets.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from advantage import AdvantageBatch, EpisodeValues, build_advantage_batch
from cvar_math import (
    CONSTRAINT_MODES,
    CostStats,
    PolicyBatch,
    RiskSpec,
    build_policy_batch,
    constraint_value,
    cvar_surrogate,
    estimate_cost_stats,
    expectation_surrogate,
    policy_objective,
)
from diffnet import (
    DTYPE,
    Checkpoint,
    GaussianPolicy,
    RunningNorm,
    ValueHead,
    grad_scalar,
    kl,
    make_fvp,
    save_checkpoint,
)
from env_nav2d import EnvConfig, Nav2DEnv
from evaluator import EpisodeRecord, record_episode, summarize_episodes
from tabular_oracle import TabularEnv, TabularSpec
from tr_solver import LineSearchEvaluators, SolverResult, SubproblemData, line_search, solve
from utils import ConfigError, NonFiniteError, require_finite

logger = logging.getLogger(__name__)

ABORTED = "aborted"
CSV_COLUMNS = [
    "epoch", "env_steps", "mean_return", "mean_cv_rate", "cvar_cv_rate", "score",
    "constraint_slack", "kl", "step_type", "wall_time_s",
]


@dataclass
class TrainConfig:
    epochs: int = 300
    episodes_per_epoch: int = 10
    horizon: int = 400
    lam: float = 0.97
    value_lr: float = 2e-4
    value_epochs: int = 40
    minibatch_size: int = 1024
    trust_delta: float = 0.01
    damping: float = 0.01
    cg_iters: int = 20
    cg_tol: float = 1e-8
    backtrack_beta: float = 0.8
    max_backtracks: int = 10
    kl_slack: float = 1.5
    constraint_mode: str = "cvar"
    hidden_sizes: Tuple[int, ...] = (512, 512)
    init_log_std: float = -0.5
    workers: int = 1
    checkpoint_every: int = 50
    seed: int = 0

    def validate(self) -> None:
        positive = ("epochs", "episodes_per_epoch", "horizon", "value_lr", "value_epochs",
                    "minibatch_size", "trust_delta", "cg_iters", "max_backtracks", "kl_slack",
                    "workers", "checkpoint_every")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"train.lam must be in [0, 1], got {self.lam}")
        if self.damping < 0 or self.cg_tol < 0:
            raise ConfigError("train.damping and train.cg_tol must be nonnegative")
        if not 0.0 < self.backtrack_beta < 1.0:
            raise ConfigError(f"train.backtrack_beta must be in (0, 1), got {self.backtrack_beta}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ConfigError(f"train.constraint_mode must be one of {CONSTRAINT_MODES}, "
                              f"got '{self.constraint_mode}'")
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError(f"train.hidden_sizes must be positive, got {self.hidden_sizes}")
        if self.seed < 0:
            raise ConfigError(f"train.seed must be nonnegative, got {self.seed}")


@dataclass
class Trajectory:
    """Raw observations o_0..o_T plus per-step signals of one episode."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    cvs: np.ndarray
    terminal: bool = False

    def __len__(self) -> int:
        return len(self.rewards)

    def record(self) -> EpisodeRecord:
        return record_episode(self.rewards, self.costs, self.cvs)


@dataclass
class PolicyUpdate:
    result: SolverResult
    constraint: float
    slack: float
    objective_gain: float
    kl: float


@dataclass
class EpochReport:
    epoch: int
    env_steps: int
    mean_return: float
    mean_cv_rate: float
    cvar_cv_rate: float
    score: float
    constraint_slack: float
    kl: float
    step_type: str
    wall_time_s: float = 0.0
    mean_cv_count: float = 0.0
    constraint_value: float = 0.0
    accepted_scale: float = 0.0
    objective_gain: float = 0.0
    value_loss: float = float("nan")
    cost_value_loss: float = float("nan")
    square_loss: float = float("nan")

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


EnvFactory = Callable[[], object]


def make_env_factory(env_kind: str, env_config: Optional[EnvConfig] = None,
                     tabular: Optional[TabularSpec] = None, gamma: float = 0.99) -> EnvFactory:
    if env_kind == "nav2d":
        config = env_config or EnvConfig()
        config.validate()
        return lambda: Nav2DEnv(config)
    if env_kind == "tabular":
        spec = tabular or TabularSpec()
        spec.validate()
        mdp = spec.build_mdp(gamma)
        return lambda: TabularEnv(mdp, spec.max_steps, spec.cv_threshold)
    raise ConfigError(f"unknown env kind '{env_kind}' (expected nav2d or tabular)")


def episode_seeds(seed: int, epoch: int, episodes: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence([seed, epoch]).spawn(episodes)


def run_episode(env, policy: GaussianPolicy, normalizer: RunningNorm, horizon: int,
                seed_seq: np.random.SeedSequence) -> Trajectory:
    """One stochastic episode of at most `horizon` steps."""
    reset_seq, noise_seq = seed_seq.spawn(2)
    rng = np.random.default_rng(noise_seq)
    obs = env.reset(int(reset_seq.generate_state(1)[0]))

    observations = [obs.as_array()]
    actions, rewards, costs, cvs = [], [], [], []
    for _ in range(horizon):
        action = policy.sample(normalizer(observations[-1]), rng)
        obs, reward, cost, done = env.step(action)
        observations.append(obs.as_array())
        actions.append(action)
        rewards.append(reward)
        costs.append(cost)
        cvs.append(env.constraint_violation())
        if done:
            break
    return Trajectory(
        observations=np.asarray(observations),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards, dtype=np.float64),
        costs=np.asarray(costs, dtype=np.float64),
        cvs=np.asarray(cvs, dtype=np.int64),
        terminal=env.is_terminal(),
    )


def collect(env_factory: EnvFactory, policy: GaussianPolicy, normalizer: RunningNorm,
            episodes: int, horizon: int, seed: int, epoch: int = 0,
            workers: int = 1) -> List[Trajectory]:
    """E episodes, deterministic in (seed, epoch) whatever the worker count."""
    seeds = episode_seeds(seed, epoch, episodes)
    workers = max(1, min(workers, episodes))
    if workers == 1:
        env = env_factory()
        return [run_episode(env, policy, normalizer, horizon, s) for s in seeds]

    def work(worker: int) -> List[Tuple[int, Trajectory]]:
        env = env_factory()
        return [(i, run_episode(env, policy, normalizer, horizon, seeds[i]))
                for i in range(worker, episodes, workers)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(work, range(workers)))
    ordered = sorted((pair for chunk in chunks for pair in chunk), key=lambda pair: pair[0])
    return [traj for _, traj in ordered]


def value_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.mean((pred - target) ** 2)


def square_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """S + S_t - 2 sqrt(S S_t), written as (sqrt S - sqrt S_t)^2."""
    return torch.mean((torch.sqrt(pred) - torch.sqrt(target)) ** 2)


class Trainer:
    """Holds the policy, the three heads and the observation normalizer."""

    def __init__(self, config: TrainConfig, risk: RiskSpec, env_factory: EnvFactory,
                 checkpoint: Optional[Checkpoint] = None):
        config.validate()
        risk.validate()
        self.config = config
        self.risk = risk
        self.env_factory = env_factory

        probe = env_factory()
        obs_dim, action_dim = probe.observation_dim, probe.action_dim
        if checkpoint is not None:
            if checkpoint.policy.mean_spec.input_dim != obs_dim or checkpoint.policy.action_dim != action_dim:
                raise ConfigError("checkpoint dimensions do not match the environment")
            self.policy = checkpoint.policy
            self.value = checkpoint.value
            self.cost_value = checkpoint.cost_value
            self.square = checkpoint.square
            self.normalizer = checkpoint.normalizer
            self.epoch = checkpoint.epoch
        else:
            generator = torch.Generator().manual_seed(config.seed)
            hidden = config.hidden_sizes
            self.policy = GaussianPolicy.create(obs_dim, action_dim, hidden, config.init_log_std, generator)
            self.value = ValueHead.create(obs_dim, hidden, "linear", generator)
            self.cost_value = ValueHead.create(obs_dim, hidden, "linear", generator)
            self.square = ValueHead.create(obs_dim, hidden, "softplus", generator)
            self.normalizer = RunningNorm(obs_dim)
            self.epoch = 0
        self.env_steps = 0

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.policy, self.value, self.cost_value, self.square,
                          self.normalizer.copy(), self.epoch)

    def collect(self, epoch: int) -> List[Trajectory]:
        cfg = self.config
        return collect(self.env_factory, self.policy, self.normalizer, cfg.episodes_per_epoch,
                       cfg.horizon, cfg.seed, epoch, cfg.workers)

    def episode_values(self, trajectories: Sequence[Trajectory]) -> List[EpisodeValues]:
        episodes = []
        for traj in trajectories:
            states = self.normalizer(traj.observations)
            episodes.append(EpisodeValues(
                rewards=traj.rewards,
                costs=traj.costs,
                values=self.value.predict(states),
                cost_values=self.cost_value.predict(states),
                square_values=self.square.predict(states),
                terminal=traj.terminal,
            ))
        return episodes

    def update_policy(self, batch: PolicyBatch, stats: CostStats) -> PolicyUpdate:
        cfg, risk = self.config, self.risk
        policy_old = self.policy
        params_old = policy_old.params.detach()

        def objective(p):
            return policy_objective(batch, policy_old, p)

        def constraint(p):
            return constraint_value(cfg.constraint_mode, batch, policy_old, p, stats, risk)

        g = grad_scalar(objective, params_old)
        surrogate = cvar_surrogate if cfg.constraint_mode == "cvar" else expectation_surrogate
        c_value, b = surrogate(batch, policy_old, params_old, stats, risk)
        with torch.no_grad():
            pre_objective = float(objective(params_old))

        sub = SubproblemData(g=g, b=b, c=c_value - risk.threshold,
                             fvp=make_fvp(policy_old, batch.states, cfg.damping),
                             delta=cfg.trust_delta)
        result = solve(sub, cfg.cg_iters, cfg.cg_tol)

        def no_grad(fn):
            def wrapped(p):
                with torch.no_grad():
                    return float(fn(p))
            return wrapped

        evaluators = LineSearchEvaluators(
            kl=no_grad(lambda p: kl(policy_old, policy_old.with_params(p), batch.states)),
            objective=no_grad(objective),
            constraint=no_grad(constraint),
            pre_objective=pre_objective,
            pre_constraint=c_value,
        )
        scale = line_search(params_old, result.direction, evaluators, result.step_type,
                            cfg.trust_delta, risk.threshold, cfg.backtrack_beta,
                            cfg.max_backtracks, cfg.kl_slack)
        result.accepted_scale = scale
        new_params = (params_old + scale * result.direction).detach()
        require_finite("policy parameters", new_params, step_type=result.step_type.value)
        self.policy = policy_old.with_params(new_params)

        realized_kl = evaluators.kl(new_params)
        gain = evaluators.objective(new_params) - pre_objective
        logger.debug(f"policy step {result.step_type.value}: scale={scale:.4g}, KL={realized_kl:.4g}, "
                     f"constraint={c_value:.4g} (threshold {risk.threshold:.4g})")
        return PolicyUpdate(result=result, constraint=c_value, slack=risk.threshold - c_value,
                            objective_gain=gain, kl=realized_kl)

    def update_values(self, states: np.ndarray, advantages: AdvantageBatch,
                      epoch: int) -> Dict[str, float]:
        """Adam regression of the three heads on fixed targets; returns final full-batch losses."""
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, epoch])
        states_t = torch.as_tensor(states, dtype=DTYPE)
        n = states_t.shape[0]
        heads = (
            ("value_loss", self.value, advantages.target_value, value_loss),
            ("cost_value_loss", self.cost_value, advantages.target_cost_value, value_loss),
            ("square_loss", self.square, advantages.target_square, square_loss),
        )
        losses = {}
        for name, head, targets, loss_fn in heads:
            targets_t = torch.as_tensor(np.asarray(targets, dtype=np.float64), dtype=DTYPE)
            params = head.params.detach().clone().requires_grad_(True)
            optimizer = torch.optim.Adam([params], lr=cfg.value_lr)
            for _ in range(cfg.value_epochs):
                order = torch.as_tensor(rng.permutation(n))
                for start in range(0, n, cfg.minibatch_size):
                    idx = order[start:start + cfg.minibatch_size]
                    optimizer.zero_grad()
                    loss = loss_fn(head(states_t[idx], params), targets_t[idx])
                    require_finite(name, loss.detach(), epoch=epoch)
                    loss.backward()
                    optimizer.step()
            head.params = params.detach()
            with torch.no_grad():
                losses[name] = float(loss_fn(head(states_t), targets_t))
        return losses

    def run_epoch(self, epoch: int) -> EpochReport:
        cfg, risk = self.config, self.risk
        trajectories = self.collect(epoch)
        episodes = self.episode_values(trajectories)
        steps = sum(len(t) for t in trajectories)
        self.env_steps += steps

        summary = summarize_episodes([t.record() for t in trajectories], risk.alpha)
        advantages = build_advantage_batch(episodes, risk.gamma, cfg.lam)
        stats = estimate_cost_stats(episodes, risk.gamma, risk.var_floor)
        states = np.concatenate([self.normalizer(t.observations[:-1]) for t in trajectories])
        actions = np.concatenate([t.actions for t in trajectories])
        batch = build_policy_batch(self.policy, states, actions, advantages,
                                   risk.gamma, risk.square_weighting)

        report = EpochReport(
            epoch=epoch,
            env_steps=self.env_steps,
            mean_return=summary["mean_return"],
            mean_cv_rate=summary["mean_cv_rate"],
            cvar_cv_rate=summary["cvar_cv_rate"],
            score=summary["score"],
            constraint_slack=0.0,
            kl=0.0,
            step_type=ABORTED,
            mean_cv_count=summary["mean_cv_count"],
        )
        try:
            update = self.update_policy(batch, stats)
        except NonFiniteError as e:
            logger.warning(f"epoch {epoch}: policy update aborted, {e} {e.diagnostics}")
        else:
            report.constraint_slack = update.slack
            report.constraint_value = update.constraint
            report.kl = update.kl
            report.step_type = update.result.step_type.value
            report.accepted_scale = update.result.accepted_scale
            report.objective_gain = update.objective_gain
            losses = self.update_values(states, advantages, epoch)
            report.value_loss = losses["value_loss"]
            report.cost_value_loss = losses["cost_value_loss"]
            report.square_loss = losses["square_loss"]

        self.normalizer.update(np.concatenate([t.observations for t in trajectories]))
        self.epoch = epoch
        logger.info(f"epoch {epoch}: return={report.mean_return:.3f}, CV rate={report.mean_cv_rate:.4f}, "
                    f"CVaR={report.cvar_cv_rate:.4f}, slack={report.constraint_slack:.4f}, "
                    f"step={report.step_type}, KL={report.kl:.5f}, gain={report.objective_gain:.4g}")
        return report


def write_reports(reports: Sequence[EpochReport], path: str,
                  previous: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """Write the CSV log; `previous` holds rows of a run being resumed."""
    if reports:
        frame = pd.DataFrame([r.as_row() for r in reports])
        extras = [c for c in frame.columns if c not in CSV_COLUMNS]
        frame = frame[CSV_COLUMNS + extras]
    else:
        frame = pd.DataFrame(columns=CSV_COLUMNS)
    if previous is not None and not previous.empty:
        frame = pd.concat([previous, frame], ignore_index=True) if reports else previous
    frame.to_csv(path, index=False)
    return frame


def train(config: TrainConfig, risk: RiskSpec, env_factory: EnvFactory, output_dir: str,
          record_wall_time: bool = True, checkpoint: Optional[Checkpoint] = None,
          progress: bool = True) -> List[EpochReport]:
    """Run epochs up to `config.epochs`, writing metrics.csv and checkpoints under output_dir."""
    trainer = Trainer(config, risk, env_factory, checkpoint)
    checkpoint_dir = os.path.join(output_dir, "checkpoints")
    csv_path = os.path.join(output_dir, "metrics.csv")
    os.makedirs(checkpoint_dir, exist_ok=True)

    first = trainer.epoch + 1
    previous = None
    if checkpoint is not None and os.path.exists(csv_path):
        previous = pd.read_csv(csv_path)
        previous = previous[previous["epoch"] < first]
        if not previous.empty:
            trainer.env_steps = int(previous["env_steps"].iloc[-1])

    start = time.perf_counter()
    reports: List[EpochReport] = []
    for epoch in tqdm(range(first, config.epochs + 1), desc="epochs", disable=not progress):
        report = trainer.run_epoch(epoch)
        report.wall_time_s = time.perf_counter() - start if record_wall_time else 0.0
        reports.append(report)
        write_reports(reports, csv_path, previous)
        if epoch % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"epoch_{epoch:04d}.trc"), trainer.checkpoint())
    save_checkpoint(os.path.join(checkpoint_dir, "final.trc"), trainer.checkpoint())
    return reports
