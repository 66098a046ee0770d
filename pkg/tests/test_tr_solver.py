#!/usr/bin/env python3
"""Test conjugate gradient, the constrained trust-region step and the line search."""

import math
import sys, os

import numpy as np
import pytest
import torch
from scipy.optimize import minimize

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from diffnet import DTYPE
from tr_solver import (
    LineSearchEvaluators,
    StepType,
    SubproblemData,
    conjugate_gradient,
    line_search,
    solve,
)
from utils import DimensionError, NonFiniteError


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def matrix_fvp(H):
    H = t(H)
    return lambda v: H @ v


def random_spd(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + 0.5 * np.eye(n)


def test_cg_on_identity_returns_rhs():
    rhs = t([1.0, -2.0, 3.0])
    assert torch.allclose(conjugate_gradient(lambda v: v, rhs), rhs)
    assert torch.equal(conjugate_gradient(lambda v: v, torch.zeros(3, dtype=DTYPE)), torch.zeros(3, dtype=DTYPE))


@pytest.mark.parametrize("seed", range(5))
def test_cg_solves_spd_systems(seed):
    rng = np.random.default_rng(seed)
    H = random_spd(rng, 6)
    rhs = rng.normal(size=6)
    x = conjugate_gradient(matrix_fvp(H), t(rhs), iters=50, tol=1e-12)
    assert np.allclose(x.numpy(), np.linalg.solve(H, rhs), atol=1e-8)


def test_cg_rejects_indefinite_operator():
    with pytest.raises(NonFiniteError):
        conjugate_gradient(lambda v: -v, t([1.0, 1.0]))


def test_subproblem_validation():
    with pytest.raises(DimensionError):
        SubproblemData(g=t([1.0, 0.0]), b=t([1.0]), c=0.0, fvp=lambda v: v)
    with pytest.raises(ValueError):
        SubproblemData(g=t([1.0]), b=t([1.0]), c=0.0, fvp=lambda v: v, delta=0.0)


def test_checked_constrained_example():
    sub = SubproblemData(g=t([1.0, 0.0]), b=t([0.0, 1.0]), c=0.05, fvp=lambda v: v, delta=0.01)
    result = solve(sub)
    assert result.step_type == StepType.CONSTRAINED
    assert result.lam == pytest.approx(math.sqrt(1.0 / 0.0175), rel=1e-6)
    assert result.nu == pytest.approx(0.05 * math.sqrt(1.0 / 0.0175), rel=1e-6)
    assert result.direction.numpy() == pytest.approx([math.sqrt(0.0175), -0.05], abs=1e-8)
    assert result.predicted_kl == pytest.approx(0.01)


def test_zero_constraint_gradient_with_slack_is_natural_gradient_step():
    g = t([3.0, 4.0])
    result = solve(SubproblemData(g=g, b=torch.zeros(2, dtype=DTYPE), c=-1.0, fvp=lambda v: v, delta=0.02))
    assert result.step_type == StepType.UNCONSTRAINED
    expected = math.sqrt(2 * 0.02) * g / g.norm()
    assert torch.allclose(result.direction, expected)


def test_zero_constraint_gradient_when_violated_gives_no_step():
    result = solve(SubproblemData(g=t([1.0, 0.0]), b=torch.zeros(2, dtype=DTYPE), c=0.3, fvp=lambda v: v))
    assert result.step_type == StepType.RECOVERY
    assert float(result.direction.abs().max()) == 0.0


def test_far_violation_takes_recovery_step():
    b = t([0.0, 2.0])
    result = solve(SubproblemData(g=t([1.0, 0.0]), b=b, c=5.0, fvp=lambda v: v, delta=0.01))
    assert result.step_type == StepType.RECOVERY
    assert float(torch.dot(b, result.direction)) < 0.0
    assert 0.5 * float(result.direction @ result.direction) == pytest.approx(0.01)
    # the step only moves along the constraint gradient
    assert float(result.direction[0]) == 0.0


def test_inactive_constraint_gives_unconstrained_step():
    result = solve(SubproblemData(g=t([1.0, 0.0]), b=t([0.0, 1.0]), c=-1.0, fvp=lambda v: v, delta=0.01))
    assert result.step_type == StepType.UNCONSTRAINED
    assert result.direction.numpy() == pytest.approx([math.sqrt(0.02), 0.0])


def _oracle_objective(g, b, c, H, delta):
    """Best g.x over the feasible set, by SLSQP from a feasible start."""
    s = float(b @ np.linalg.solve(H, b))
    x0 = -(c / s) * np.linalg.solve(H, b) if c > 0 else np.zeros_like(g)
    res = minimize(
        lambda x: -g @ x, x0, jac=lambda x: -g, method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda x: -(c + b @ x), "jac": lambda x: -b},
                     {"type": "ineq", "fun": lambda x: delta - 0.5 * x @ H @ x, "jac": lambda x: -H @ x}],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return float(g @ res.x)


@pytest.mark.parametrize("seed", range(100))
def test_random_instances_respect_trust_region_and_constraint(seed):
    rng = np.random.default_rng(seed)
    n = 4
    H = random_spd(rng, n)
    g, b = rng.normal(size=n), rng.normal(size=n)
    c = float(rng.uniform(-0.3, 0.3))
    delta = 0.01
    result = solve(SubproblemData(g=t(g), b=t(b), c=c, fvp=matrix_fvp(H), delta=delta), cg_iters=50, cg_tol=1e-12)
    x = result.direction.numpy()
    assert 0.5 * x @ H @ x <= delta * (1 + 1e-6)
    linear = c + b @ x
    if result.step_type == StepType.RECOVERY:
        assert b @ x < 0.0
        assert c - math.sqrt(2 * delta * float(b @ np.linalg.solve(H, b))) > 0.0
    else:
        assert linear <= 1e-8
        if seed < 30:
            optimum = _oracle_objective(g, b, c, H, delta)
            assert g @ x == pytest.approx(optimum, abs=1e-4 * max(1.0, abs(optimum)))


def _evaluators(kl, objective, constraint, pre_objective=0.0, pre_constraint=0.0):
    return LineSearchEvaluators(kl=kl, objective=objective, constraint=constraint,
                                pre_objective=pre_objective, pre_constraint=pre_constraint)


def test_line_search_zero_direction_accepts_full_step():
    old = t([0.5, -0.5])
    ev = _evaluators(lambda p: float(((p - old) ** 2).sum()), lambda p: 1.0, lambda p: 2.0,
                     pre_objective=1.0, pre_constraint=2.0)
    assert line_search(old, torch.zeros(2, dtype=DTYPE), ev, StepType.CONSTRAINED, 0.01, 1.0) == 1.0


def test_line_search_rejects_everything():
    ev = _evaluators(lambda p: 1.0, lambda p: 1.0, lambda p: 0.0)
    assert line_search(torch.zeros(2, dtype=DTYPE), t([1.0, 0.0]), ev, StepType.UNCONSTRAINED, 0.01, 1.0) == 0.0


def test_line_search_backtracks_to_kl_limit():
    old = torch.zeros(2, dtype=DTYPE)
    ev = _evaluators(lambda p: float((p ** 2).sum()), lambda p: float(p[0]), lambda p: 0.0)
    # kl = scale^2 must stay below 1.5 * 0.1; 0.8^4 fails, 0.8^5 passes
    scale = line_search(old, t([1.0, 0.0]), ev, StepType.UNCONSTRAINED, 0.1, 1.0)
    assert scale == pytest.approx(0.8 ** 5)


def test_line_search_constraint_rules():
    old = torch.zeros(1, dtype=DTYPE)
    direction = t([1.0])
    # moving lowers the objective but also lowers the constraint
    ev = _evaluators(lambda p: 0.0, lambda p: -float(p[0]), lambda p: 3.0 - float(p[0]),
                     pre_objective=0.0, pre_constraint=3.0)
    assert line_search(old, direction, ev, StepType.RECOVERY, 0.01, 1.0) == 1.0
    assert line_search(old, direction, ev, StepType.CONSTRAINED, 0.01, 1.0) == 0.0

    # constraint above threshold is fine while it does not exceed the previous value
    ev = _evaluators(lambda p: 0.0, lambda p: float(p[0]), lambda p: 2.5,
                     pre_objective=0.0, pre_constraint=3.0)
    assert line_search(old, direction, ev, StepType.CONSTRAINED, 0.01, 1.0) == 1.0
    ev = _evaluators(lambda p: 0.0, lambda p: float(p[0]), lambda p: 3.5,
                     pre_objective=0.0, pre_constraint=3.0)
    assert line_search(old, direction, ev, StepType.CONSTRAINED, 0.01, 1.0) == 0.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
