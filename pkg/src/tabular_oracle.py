"""
Exact computations on small finite MDPs.

Everything here is linear algebra on explicit tensors P[s, a, s'], C[s, a, s'],
R[s, a, s']: discounted and doubly discounted state distributions, value,
cost-value and cost-square functions, and numeric checks of the bounds that
justify the CVaR surrogate. `TabularEnv` wraps an MDP as an episodic simulator
so the trainer can run on it too.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from cvar_math import DEFAULT_VAR_FLOOR, cvar_coefficient
from utils import ConfigError

logger = logging.getLogger(__name__)

ROW_TOL = 1e-12


@dataclass
class TabularMdp:
    P: np.ndarray
    C: np.ndarray
    R: np.ndarray
    rho: np.ndarray
    gamma: float
    terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.terminal is not None:
            self.terminal = np.asarray(self.terminal, dtype=bool)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def validate(self) -> None:
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ConfigError(f"P must have shape [S, A, S], got {self.P.shape}")
        for name in ("C", "R"):
            if getattr(self, name).shape != self.P.shape:
                raise ConfigError(f"{name} must match P's shape {self.P.shape}")
        if self.rho.shape != (self.n_states,):
            raise ConfigError(f"rho must have shape ({self.n_states},)")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ConfigError("every P[s, a, :] must be a probability vector")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > ROW_TOL:
            raise ConfigError("rho must be a probability vector")
        if np.any(self.C < 0):
            raise ConfigError("costs must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")


@dataclass
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ConfigError("policy must be an [S, A] matrix")
        if np.any(self.probs < 0) or np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ConfigError("every policy row must be a probability vector")


# Generators

def _dirichlet(rng: np.random.Generator, *size: int) -> np.ndarray:
    return rng.dirichlet(np.ones(size[-1]), size=size[:-1])


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               cost_low: float = 0.0, cost_high: float = 1.0) -> TabularMdp:
    """Dirichlet(1) transitions, uniform costs and rewards, Dirichlet initial distribution."""
    P = _dirichlet(rng, n_states, n_actions, n_states)
    C = rng.uniform(cost_low, cost_high, size=(n_states, n_actions, n_states))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states))
    rho = _dirichlet(rng, n_states)
    return TabularMdp(P=_renormalize(P), C=C, R=R, rho=_renormalize(rho), gamma=gamma)


def _renormalize(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=-1, keepdims=True)


def random_policy(rng: np.random.Generator, mdp: TabularMdp) -> TabularPolicy:
    return TabularPolicy(_renormalize(_dirichlet(rng, mdp.n_states, mdp.n_actions)))


def perturbed_policy(rng: np.random.Generator, policy: TabularPolicy, weight: float) -> TabularPolicy:
    """Mix `policy` with a random policy: (1 - weight) * pi + weight * u."""
    noise = _dirichlet(rng, *policy.probs.shape)
    return TabularPolicy(_renormalize((1.0 - weight) * policy.probs + weight * noise))


# Exact quantities

def transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sap->sp", policy.probs, mdp.P)


def _discounted_distribution(mdp: TabularMdp, policy: TabularPolicy, discount: float) -> np.ndarray:
    p_pi = transition_matrix(mdp, policy)
    identity = np.eye(mdp.n_states)
    return (1.0 - discount) * linalg.solve((identity - discount * p_pi).T, mdp.rho)


def exact_dists(mdp: TabularMdp, policy: TabularPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """(d, d2): discounted and doubly discounted state distributions."""
    return (_discounted_distribution(mdp, policy, mdp.gamma),
            _discounted_distribution(mdp, policy, mdp.gamma ** 2))


def _expected(mdp: TabularMdp, policy: TabularPolicy, per_transition: np.ndarray) -> np.ndarray:
    """sum_a pi(a|s) sum_s' P(s'|s,a) x(s, a, s') for every s."""
    return np.einsum("sa,sap,sap->s", policy.probs, mdp.P, per_transition)


def square_integrand(mdp: TabularMdp, cost_values: np.ndarray) -> np.ndarray:
    """C^2 + 2 gamma C V_C(s') for every (s, a, s')."""
    return mdp.C ** 2 + 2.0 * mdp.gamma * mdp.C * cost_values[None, None, :]


def exact_values(mdp: TabularMdp, policy: TabularPolicy) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(V, V_C, S_C) from their Bellman linear systems."""
    gamma = mdp.gamma
    p_pi = transition_matrix(mdp, policy)
    identity = np.eye(mdp.n_states)
    value = linalg.solve(identity - gamma * p_pi, _expected(mdp, policy, mdp.R))
    cost_value = linalg.solve(identity - gamma * p_pi, _expected(mdp, policy, mdp.C))
    square = linalg.solve(identity - gamma ** 2 * p_pi,
                          _expected(mdp, policy, square_integrand(mdp, cost_value)))
    return value, cost_value, square


def exact_jc(mdp: TabularMdp, policy: TabularPolicy) -> float:
    return float(mdp.rho @ exact_values(mdp, policy)[1])


def exact_js(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """J_S through the doubly discounted distribution."""
    _, d2 = exact_dists(mdp, policy)
    _, cost_value, _ = exact_values(mdp, policy)
    per_state = _expected(mdp, policy, square_integrand(mdp, cost_value))
    return float(d2 @ per_state) / (1.0 - mdp.gamma ** 2)


def state_action_values(mdp: TabularMdp, policy: TabularPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """(Q_C[s, a], Q_S[s, a]) under `policy`."""
    gamma = mdp.gamma
    _, cost_value, square = exact_values(mdp, policy)
    q_c = np.einsum("sap,sap->sa", mdp.P, mdp.C + gamma * cost_value[None, None, :])
    q_s = np.einsum("sap,sap->sa", mdp.P,
                    square_integrand(mdp, cost_value) + gamma ** 2 * square[None, None, :])
    return q_c, q_s


def advantages(mdp: TabularMdp, policy: TabularPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """(A_C[s, a], A_S[s, a]) under `policy`."""
    _, cost_value, square = exact_values(mdp, policy)
    q_c, q_s = state_action_values(mdp, policy)
    return q_c - cost_value[:, None], q_s - square[:, None]


def policy_distance(policy: TabularPolicy, other: TabularPolicy) -> float:
    """max_s total variation between the two action distributions."""
    return float(0.5 * np.abs(other.probs - policy.probs).sum(axis=1).max())


def cvar_of(j_c: float, j_s: float, alpha: float, var_floor: float = DEFAULT_VAR_FLOOR) -> float:
    return j_c + cvar_coefficient(alpha) * float(np.sqrt(max(j_s - j_c ** 2, var_floor)))


# Brute-force oracles

def truncated_cost_moments(mdp: TabularMdp, policy: TabularPolicy, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """E[G_H | s_0 = s] and E[G_H^2 | s_0 = s] for the first `horizon` costs, by backward recursion."""
    gamma = mdp.gamma
    first = np.zeros(mdp.n_states)
    second = np.zeros(mdp.n_states)
    for _ in range(horizon):
        first, second = (
            _expected(mdp, policy, mdp.C + gamma * first[None, None, :]),
            _expected(mdp, policy, mdp.C ** 2 + 2.0 * gamma * mdp.C * first[None, None, :]
                      + gamma ** 2 * second[None, None, :]),
        )
    return first, second


def enumerate_cost_moments(mdp: TabularMdp, policy: TabularPolicy, horizon: int) -> Tuple[float, float]:
    """(E[G_H], E[G_H^2]) from rho by walking every trajectory of length `horizon`."""
    gamma = mdp.gamma
    transitions = list(itertools.product(range(mdp.n_actions), range(mdp.n_states)))
    mean = 0.0
    square = 0.0
    for s0 in range(mdp.n_states):
        if mdp.rho[s0] == 0:
            continue
        for path in itertools.product(transitions, repeat=horizon):
            prob = mdp.rho[s0]
            total = 0.0
            state = s0
            for t, (a, nxt) in enumerate(path):
                prob *= policy.probs[state, a] * mdp.P[state, a, nxt]
                if prob == 0.0:
                    break
                total += gamma ** t * mdp.C[state, a, nxt]
                state = nxt
            mean += prob * total
            square += prob * total ** 2
    return mean, square


# Bound checks

@dataclass
class CheckResult:
    name: str
    lhs: float
    rhs: float
    tol: float = 1e-10
    kind: str = "le"
    skipped: bool = False

    @property
    def slack(self) -> float:
        if self.kind == "eq":
            return self.tol - abs(self.lhs - self.rhs)
        return self.rhs + self.tol - self.lhs

    @property
    def passed(self) -> bool:
        return self.skipped or self.slack >= 0.0


def lemma1_residual(mdp: TabularMdp, policy: TabularPolicy, f: np.ndarray) -> float:
    g2 = mdp.gamma ** 2
    _, d2 = exact_dists(mdp, policy)
    next_f = _expected(mdp, policy, np.broadcast_to(f[None, None, :], mdp.P.shape))
    return float((1.0 - g2) * (mdp.rho @ f) + g2 * (d2 @ next_f) - d2 @ f)


def check_lemma1(mdp: TabularMdp, policy: TabularPolicy, f: np.ndarray) -> float:
    return lemma1_residual(mdp, policy, np.asarray(f, dtype=np.float64))


def check_corollary1(mdp: TabularMdp, policy: TabularPolicy, f: np.ndarray) -> float:
    """J_S minus its expression through an arbitrary state function f."""
    f = np.asarray(f, dtype=np.float64)
    g = mdp.gamma
    _, d2 = exact_dists(mdp, policy)
    _, cost_value, _ = exact_values(mdp, policy)
    integrand = square_integrand(mdp, cost_value) + g ** 2 * f[None, None, :] - f[:, None, None]
    expression = mdp.rho @ f + (d2 @ _expected(mdp, policy, integrand)) / (1.0 - g ** 2)
    return exact_js(mdp, policy) - float(expression)


def check_lemma2(mdp: TabularMdp, policy: TabularPolicy, other: TabularPolicy,
                 rhs_scale: float = 1.0) -> CheckResult:
    """||V_C' - V_C||_inf <= 2 ||V_C||_inf D / (1 - gamma).

    Holds whenever max_{s,a} E[C] <= (2 - gamma) ||V_C||_inf, e.g. costs bounded away from
    zero; a zero-cost action under pi next to a costly one can break it.
    """
    _, v_c, _ = exact_values(mdp, policy)
    _, v_c_new, _ = exact_values(mdp, other)
    lhs = float(np.max(np.abs(v_c_new - v_c)))
    rhs = 2.0 * float(np.max(np.abs(v_c))) / (1.0 - mdp.gamma) * policy_distance(policy, other)
    return CheckResult("lemma2", lhs, rhs_scale * rhs, tol=1e-12)


def check_lemma3(mdp: TabularMdp, policy: TabularPolicy, other: TabularPolicy,
                 rhs_scale: float = 1.0) -> CheckResult:
    """TV(d2', d2) <= gamma^2 / (1 - gamma^2) * D."""
    _, d2 = exact_dists(mdp, policy)
    _, d2_new = exact_dists(mdp, other)
    g2 = mdp.gamma ** 2
    lhs = 0.5 * float(np.abs(d2_new - d2).sum())
    rhs = g2 / (1.0 - g2) * policy_distance(policy, other)
    return CheckResult("lemma3", lhs, rhs_scale * rhs)


@dataclass
class SurrogateTerms:
    """Exact surrogate values and error terms of a candidate policy around `policy`."""

    j_c: float
    j_s: float
    j_c_new: float
    j_s_new: float
    surrogate_j_c: float
    surrogate_j_s: float
    distance: float
    eps_s: float
    eps_c: float
    gamma: float

    @property
    def jc_lower_bound(self) -> float:
        """Lower end of the two-sided bound on J_C(pi')."""
        g = self.gamma
        return self.surrogate_j_c - 2.0 * g * self.eps_c * self.distance / (1.0 - g) ** 2


def surrogate_terms(mdp: TabularMdp, policy: TabularPolicy, other: TabularPolicy) -> SurrogateTerms:
    g = mdp.gamma
    d, d2 = exact_dists(mdp, policy)
    _, v_c, _ = exact_values(mdp, policy)
    a_c, a_s = advantages(mdp, policy)
    exp_a_c = np.einsum("sa,sa->s", other.probs, a_c)
    exp_a_s = np.einsum("sa,sa->s", other.probs, a_s)
    j_c, j_s = exact_jc(mdp, policy), exact_js(mdp, policy)
    expected_cost = float(d2 @ _expected(mdp, other, mdp.C))
    eps_s = (g ** 2 / (1.0 - g ** 2) * float(np.abs(exp_a_s).max())
             + 2.0 * g * float(np.max(np.abs(v_c))) / (1.0 - g) * expected_cost)
    return SurrogateTerms(
        j_c=j_c,
        j_s=j_s,
        j_c_new=exact_jc(mdp, other),
        j_s_new=exact_js(mdp, other),
        surrogate_j_c=j_c + float(d @ exp_a_c) / (1.0 - g),
        surrogate_j_s=j_s + float(d2 @ exp_a_s) / (1.0 - g ** 2),
        distance=policy_distance(policy, other),
        eps_s=eps_s,
        eps_c=float(np.abs(exp_a_c).max()),
        gamma=g,
    )


def check_theorem1(mdp: TabularMdp, policy: TabularPolicy, other: TabularPolicy,
                   rhs_scale: float = 1.0) -> CheckResult:
    """J_S' - J_S <= surrogate improvement + 2 eps_S D / (1 - gamma^2)."""
    g2 = mdp.gamma ** 2
    t = surrogate_terms(mdp, policy, other)
    lhs = t.j_s_new - t.j_s
    rhs = (t.surrogate_j_s - t.j_s) + 2.0 * t.eps_s * t.distance / (1.0 - g2)
    return CheckResult("theorem1", lhs, rhs_scale * rhs)


def check_theorem2(mdp: TabularMdp, policy: TabularPolicy, other: TabularPolicy, alpha: float,
                   rhs_scale: float = 1.0, var_floor: float = DEFAULT_VAR_FLOOR,
                   guard_lower_bound: bool = True) -> CheckResult:
    """Gaussian CVaR of pi' against the surrogate CVaR plus the divergence penalty.

    The bound squares the lower end of the J_C(pi') interval, so it is only defined
    while that end is nonnegative; otherwise the check is skipped, as it is for a
    degenerate variance. `guard_lower_bound=False` evaluates it regardless.
    """
    g = mdp.gamma
    t = surrogate_terms(mdp, policy, other)
    variance_new = t.j_s_new - t.j_c_new ** 2
    if variance_new <= var_floor:
        return CheckResult("theorem2", 0.0, 0.0, skipped=True)
    if guard_lower_bound and t.jc_lower_bound < 0.0:
        logger.debug(f"theorem2 skipped: J_C lower bound {t.jc_lower_bound:.4g} < 0 at D={t.distance:.3g}")
        return CheckResult("theorem2", 0.0, 0.0, skipped=True)
    coef = cvar_coefficient(alpha)
    lhs = cvar_of(t.j_c_new, t.j_s_new, alpha, var_floor)
    eps_cvar = t.eps_s + (t.surrogate_j_c - g * t.eps_c * t.distance / (1.0 - g) ** 2) \
        * 2.0 * g * (1.0 + g) / (1.0 - g) * t.eps_c
    penalty = 2.0 / (1.0 - g) * (g * t.eps_c / (1.0 - g)
                                 + coef / np.sqrt(variance_new) * eps_cvar / (1.0 + g)) * t.distance
    rhs = cvar_of(t.surrogate_j_c, t.surrogate_j_s, alpha, var_floor) + penalty
    return CheckResult("theorem2", float(lhs), rhs_scale * float(rhs))


def _equality(result: CheckResult, name: str, tol: float = 1e-9) -> CheckResult:
    return CheckResult(name, result.lhs, result.rhs, tol=tol, kind="eq", skipped=result.skipped)


def ensemble_triple(seed: int, index: int, gammas: Sequence[float] = (0.5, 0.9),
                    cost_low: float = 0.0, perturbation: Optional[float] = None
                    ) -> Tuple[TabularMdp, TabularPolicy, TabularPolicy, np.ndarray]:
    """Member `index` of a seeded ensemble: (mdp, pi, pi', state function f)."""
    rng = np.random.default_rng([seed, index])
    gamma = gammas[index % len(gammas)]
    mdp = random_mdp(rng, int(rng.integers(2, 6)), int(rng.integers(2, 4)), gamma, cost_low=cost_low)
    policy = random_policy(rng, mdp)
    if perturbation is None:
        other = random_policy(rng, mdp)
    else:
        other = perturbed_policy(rng, policy, perturbation)
    return mdp, policy, other, rng.normal(size=mdp.n_states)


def run_ensemble(seed: int, size: int, gammas: Sequence[float] = (0.5, 0.9),
                 alpha: float = 0.125, cost_low: float = 0.0,
                 perturbation: Optional[float] = None,
                 rhs_scale: float = 1.0) -> List[CheckResult]:
    """Every identity and bound on `size` seeded random (MDP, pi, pi') triples."""
    results: List[CheckResult] = []
    for i in range(size):
        mdp, policy, other, f = ensemble_triple(seed, i, gammas, cost_low, perturbation)
        _, _, square = exact_values(mdp, policy)
        results.append(CheckResult("square_identity", exact_js(mdp, policy), float(mdp.rho @ square),
                                   tol=1e-9, kind="eq"))
        results.append(CheckResult("lemma1", abs(check_lemma1(mdp, policy, f)), 0.0))
        results.append(CheckResult("corollary1", abs(check_corollary1(mdp, policy, f)), 0.0))
        results.append(check_lemma2(mdp, policy, other, rhs_scale))
        results.append(check_lemma3(mdp, policy, other, rhs_scale))
        results.append(check_theorem1(mdp, policy, other, rhs_scale))
        results.append(check_theorem2(mdp, policy, other, alpha, rhs_scale))
        results.append(_equality(check_theorem1(mdp, policy, policy, rhs_scale), "theorem1_equality"))
        results.append(_equality(check_theorem2(mdp, policy, policy, alpha, rhs_scale), "theorem2_equality"))

    failures = [r for r in results if not r.passed]
    for r in failures:
        logger.warning(f"{r.name} violated: lhs={r.lhs:.6g}, rhs={r.rhs:.6g}, slack={r.slack:.3g}")
    logger.info(f"Ensemble of {size}: {len(results)} checks, {len(failures)} failures")
    return results


def summarize_checks(results: Iterable[CheckResult]) -> pd.DataFrame:
    """One row per check: count, failures, skipped, worst-case slack."""
    frame = pd.DataFrame([
        {"check": r.name, "passed": r.passed, "skipped": r.skipped,
         "slack": np.nan if r.skipped else r.slack}
        for r in results
    ])
    if frame.empty:
        return pd.DataFrame(columns=["check", "n", "failures", "skipped", "worst_slack"])
    summary = frame.groupby("check", sort=False).agg(
        n=("passed", "size"),
        failures=("passed", lambda s: int((~s).sum())),
        skipped=("skipped", "sum"),
        worst_slack=("slack", "min"),
    ).reset_index()
    return summary


# Episodic simulator

@dataclass
class TabularSpec:
    n_states: int = 5
    n_actions: int = 3
    seed: int = 0
    cost_low: float = 0.0
    cost_high: float = 1.0
    terminal_state: int = -1
    cv_threshold: float = 0.5
    max_steps: int = 50

    def validate(self) -> None:
        if self.n_states < 1 or self.n_actions < 1:
            raise ConfigError("tabular.n_states and tabular.n_actions must be >= 1")
        if not 0.0 <= self.cost_low <= self.cost_high:
            raise ConfigError("tabular costs need 0 <= cost_low <= cost_high")
        if self.terminal_state >= self.n_states:
            raise ConfigError(f"tabular.terminal_state {self.terminal_state} out of range")
        if self.max_steps < 1:
            raise ConfigError("tabular.max_steps must be >= 1")

    def build_mdp(self, gamma: float) -> TabularMdp:
        self.validate()
        rng = np.random.default_rng(self.seed)
        mdp = random_mdp(rng, self.n_states, self.n_actions, gamma, self.cost_low, self.cost_high)
        if self.terminal_state < 0:
            return mdp
        # absorbing, cost-free terminal state
        t = self.terminal_state
        mdp.P[t] = 0.0
        mdp.P[t, :, t] = 1.0
        mdp.C[t] = 0.0
        mdp.R[t] = 0.0
        terminal = np.zeros(self.n_states, dtype=bool)
        terminal[t] = True
        rho = mdp.rho.copy()
        if self.n_states > 1:
            rho[t] = 0.0
            rho /= rho.sum()
        return TabularMdp(P=mdp.P, C=mdp.C, R=mdp.R, rho=rho, gamma=gamma, terminal=terminal)


@dataclass
class TabularObservation:
    state: int
    n_states: int

    def as_array(self) -> np.ndarray:
        one_hot = np.zeros(self.n_states)
        one_hot[self.state] = 1.0
        return one_hot


class TabularEnv:
    """Episodic sampler over a TabularMdp with a 1-D continuous action in [-1, 1]."""

    def __init__(self, mdp: TabularMdp, max_steps: int = 50, cv_threshold: float = 0.5):
        self.mdp = mdp
        self.max_steps = max_steps
        self.cv_threshold = cv_threshold
        self.state: Optional[int] = None
        self.step_count = 0
        self.last_cost = 0.0
        self._rng: Optional[np.random.Generator] = None

    @classmethod
    def from_spec(cls, spec: TabularSpec, gamma: float) -> "TabularEnv":
        return cls(spec.build_mdp(gamma), spec.max_steps, spec.cv_threshold)

    @property
    def observation_dim(self) -> int:
        return self.mdp.n_states

    @property
    def action_dim(self) -> int:
        return 1

    def discrete_action(self, action) -> int:
        value = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        return min(int((value + 1.0) / 2.0 * self.mdp.n_actions), self.mdp.n_actions - 1)

    def reset(self, seed: int) -> TabularObservation:
        self._rng = np.random.default_rng(seed)
        self.state = int(self._rng.choice(self.mdp.n_states, p=self.mdp.rho))
        self.step_count = 0
        self.last_cost = 0.0
        return TabularObservation(self.state, self.mdp.n_states)

    def step(self, action) -> Tuple[TabularObservation, float, float, bool]:
        if self.state is None:
            raise RuntimeError("environment used before reset()")
        if self.step_count >= self.max_steps or self.is_terminal():
            raise RuntimeError("step() called on a finished episode; call reset() first")
        a = self.discrete_action(action)
        nxt = int(self._rng.choice(self.mdp.n_states, p=self.mdp.P[self.state, a]))
        reward = float(self.mdp.R[self.state, a, nxt])
        cost = float(self.mdp.C[self.state, a, nxt])
        self.state = nxt
        self.step_count += 1
        self.last_cost = cost
        done = self.step_count >= self.max_steps or self.is_terminal()
        return TabularObservation(nxt, self.mdp.n_states), reward, cost, done

    def constraint_violation(self) -> int:
        return int(self.last_cost > self.cv_threshold)

    def is_terminal(self) -> bool:
        return self.mdp.terminal is not None and bool(self.mdp.terminal[self.state])
