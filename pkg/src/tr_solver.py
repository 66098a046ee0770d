"""
Trust-region step with one linear constraint.

Solves   max_x  g.x   s.t.  c + b.x <= 0,  1/2 x.H.x <= delta
with H available only through Fisher-vector products. H^-1 g and H^-1 b come from
conjugate gradient; the two-variable dual is solved in closed form. When the
constraint cannot be met inside the trust region the step only decreases it.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import torch

from utils import DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

Fvp = Callable[[torch.Tensor], torch.Tensor]

TINY = 1e-12


class StepType(str, Enum):
    UNCONSTRAINED = "unconstrained"
    CONSTRAINED = "constrained"
    RECOVERY = "recovery"


@dataclass
class SubproblemData:
    g: torch.Tensor
    b: torch.Tensor
    c: float
    fvp: Fvp
    delta: float = 0.01

    def __post_init__(self):
        if self.g.shape != self.b.shape or self.g.dim() != 1:
            raise DimensionError(f"g {tuple(self.g.shape)} and b {tuple(self.b.shape)} must be equal-length vectors")
        if not self.delta > 0:
            raise ValueError(f"trust-region radius must be > 0, got {self.delta}")


@dataclass
class SolverResult:
    direction: torch.Tensor
    step_type: StepType
    nu: float = 0.0
    lam: float = 0.0
    accepted_scale: float = 1.0
    predicted_kl: float = 0.0


def conjugate_gradient(fvp: Fvp, rhs: torch.Tensor, iters: int = 20, tol: float = 1e-8) -> torch.Tensor:
    """Approximately solve fvp(x) = rhs for a symmetric positive definite operator."""
    x = torch.zeros_like(rhs)
    residual = rhs.clone()
    rhs_norm = float(rhs.norm())
    if rhs_norm == 0.0:
        return x
    p = residual.clone()
    rs_old = torch.dot(residual, residual)
    for i in range(iters):
        Ap = fvp(p)
        pAp = torch.dot(p, Ap)
        if not torch.isfinite(pAp):
            raise NonFiniteError("conjugate-gradient curvature", {"iteration": i})
        if pAp <= 0:
            raise NonFiniteError("conjugate-gradient curvature (operator not positive definite)",
                                 {"iteration": i, "pAp": float(pAp)})
        alpha = rs_old / pAp
        x = x + alpha * p
        residual = residual - alpha * Ap
        rs_new = torch.dot(residual, residual)
        if not torch.isfinite(rs_new):
            raise NonFiniteError("conjugate-gradient residual", {"iteration": i})
        if math.sqrt(float(rs_new)) <= tol * rhs_norm:
            break
        p = residual + (rs_new / rs_old) * p
        rs_old = rs_new
    return x


def _recovery(sub: SubproblemData, x_b: torch.Tensor, s: float) -> SolverResult:
    nu = math.sqrt(2.0 * sub.delta / s)
    return SolverResult(direction=-nu * x_b, step_type=StepType.RECOVERY, nu=nu, lam=0.0)


def _zero_step(sub: SubproblemData, step_type: StepType) -> SolverResult:
    return SolverResult(direction=torch.zeros_like(sub.g), step_type=step_type)


def _dual_lambda(q: float, r: float, s: float, c: float, delta: float) -> Optional[float]:
    """Closed-form minimizer of the two-piece dual over lambda >= 0."""
    A = max(q - r * r / s, 0.0)
    B = 2.0 * delta - c * c / s
    if B <= 0.0:
        return None

    # nu > 0 exactly when lambda * c + r > 0
    if c > 0:
        boundary = max(0.0, -r / c)
        range_a, range_b = (boundary, math.inf), (0.0, boundary)
    elif c < 0:
        boundary = max(0.0, -r / c)
        range_a, range_b = (0.0, boundary), (boundary, math.inf)
    elif r > 0:
        range_a, range_b = (0.0, math.inf), (0.0, 0.0)
    else:
        range_a, range_b = (0.0, 0.0), (0.0, math.inf)

    def project(x: float, bounds) -> float:
        return max(bounds[0], min(bounds[1], x))

    def dual_a(lam: float) -> float:
        if lam <= TINY:
            return math.inf
        return A / (2.0 * lam) + lam * B / 2.0 - r * c / s

    def dual_b(lam: float) -> float:
        if lam <= TINY:
            return math.inf
        return q / (2.0 * lam) + lam * delta

    lam_a = project(math.sqrt(A / B), range_a)
    lam_b = project(math.sqrt(q / (2.0 * delta)), range_b)
    best = lam_a if dual_a(lam_a) <= dual_b(lam_b) else lam_b
    if best <= TINY or not math.isfinite(best):
        return None
    return best


def solve(sub: SubproblemData, cg_iters: int = 20, cg_tol: float = 1e-8) -> SolverResult:
    delta, c = sub.delta, float(sub.c)
    x_g = conjugate_gradient(sub.fvp, sub.g, cg_iters, cg_tol)
    q = float(torch.dot(x_g, sub.fvp(x_g)))
    b_is_zero = float(torch.dot(sub.b, sub.b)) <= TINY

    if b_is_zero:
        if c > 0:
            logger.warning(f"constraint violated (c={c:.4g}) with zero constraint gradient; no step")
            return _zero_step(sub, StepType.RECOVERY)
        if q <= TINY:
            return _zero_step(sub, StepType.UNCONSTRAINED)
        return _finish(sub, _unconstrained(sub, x_g, q))

    x_b = conjugate_gradient(sub.fvp, sub.b, cg_iters, cg_tol)
    Hx_b = sub.fvp(x_b)
    s = float(torch.dot(x_b, Hx_b))
    r = float(torch.dot(x_g, Hx_b))
    logger.debug(f"LQCLP scalars: q={q:.4g}, r={r:.4g}, s={s:.4g}, c={c:.4g}")

    if q <= TINY:
        if c > 0:
            return _finish(sub, _recovery(sub, x_b, s))
        return _zero_step(sub, StepType.UNCONSTRAINED)

    step = _unconstrained(sub, x_g, q)
    if c + float(torch.dot(sub.b, step.direction)) <= 0.0:
        return _finish(sub, step)

    if c - math.sqrt(2.0 * delta * s) > 0.0:
        return _finish(sub, _recovery(sub, x_b, s))

    lam = _dual_lambda(q, r, s, c, delta)
    if lam is None:
        if c < 0:
            # constraint cannot bind inside the trust region
            return _finish(sub, step)
        direction = -(c / s) * x_b
        return _finish(sub, SolverResult(direction=direction, step_type=StepType.CONSTRAINED,
                                         nu=math.inf, lam=0.0))
    nu = max(0.0, (lam * c + r) / s)
    direction = (x_g - nu * x_b) / lam
    return _finish(sub, SolverResult(direction=direction, step_type=StepType.CONSTRAINED,
                                     nu=nu, lam=lam))


def _unconstrained(sub: SubproblemData, x_g: torch.Tensor, q: float) -> SolverResult:
    scale = math.sqrt(2.0 * sub.delta / q)
    return SolverResult(direction=scale * x_g, step_type=StepType.UNCONSTRAINED,
                        nu=0.0, lam=1.0 / scale)


def _finish(sub: SubproblemData, result: SolverResult) -> SolverResult:
    """Pull the step back onto the trust region if CG error pushed it outside."""
    direction = result.direction
    if not bool(torch.isfinite(direction).all()):
        raise NonFiniteError("trust-region step", {"step_type": result.step_type.value})
    predicted = 0.5 * float(torch.dot(direction, sub.fvp(direction)))
    if predicted > sub.delta * (1.0 + 1e-9):
        shrink = math.sqrt(sub.delta / predicted)
        result.direction = direction * shrink
        predicted = sub.delta
    result.predicted_kl = predicted
    logger.debug(f"{result.step_type.value} step: nu={result.nu:.4g}, lambda={result.lam:.4g}, "
                 f"predicted KL={predicted:.4g}")
    return result


@dataclass
class LineSearchEvaluators:
    """True KL, objective and constraint surrogate at candidate parameters."""

    kl: Callable[[torch.Tensor], float]
    objective: Callable[[torch.Tensor], float]
    constraint: Callable[[torch.Tensor], float]
    pre_objective: float
    pre_constraint: float


def line_search(params_old: torch.Tensor, direction: torch.Tensor, evaluators: LineSearchEvaluators,
                step_type: StepType, delta: float, threshold: float,
                beta: float = 0.8, max_backtracks: int = 10, kl_slack: float = 1.5) -> float:
    """Largest scale in {1, beta, ..., beta^(n-1)} passing the acceptance tests, else 0."""
    scale = 1.0
    for attempt in range(max_backtracks):
        candidate = params_old + scale * direction
        kl_value = evaluators.kl(candidate)
        constraint = evaluators.constraint(candidate)
        objective = evaluators.objective(candidate)

        kl_ok = kl_value <= kl_slack * delta
        if step_type == StepType.RECOVERY:
            constraint_ok = constraint <= evaluators.pre_constraint
            objective_ok = True
        else:
            constraint_ok = constraint <= max(threshold, evaluators.pre_constraint)
            objective_ok = objective >= evaluators.pre_objective

        if kl_ok and constraint_ok and objective_ok:
            return scale
        logger.debug(f"backtrack {attempt}: scale={scale:.4g}, kl={kl_value:.4g}, "
                     f"constraint={constraint:.4g}, objective={objective:.4g}")
        scale *= beta
    logger.warning(f"line search rejected all {max_backtracks} scales for the {step_type.value} step")
    return 0.0
