"""
Continuous-time forward-backward-forward dynamics

    x'(t) = -x(t) + y(t) + lam (F(x(t)) - F(y(t))),   y(t) = P_C(x(t) - lam F(x(t))),

integrated with fixed-step explicit Euler or classical RK4, plus the checks
that go with it (Lyapunov decrease, exponential envelope, error bound).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import DivergenceError, DomainError, NonFiniteError, PreconditionError
from geometry import FeasibleSet, Vector, as_vector, project
from operators import OperatorSpec

logger = logging.getLogger(__name__)

LYAPUNOV_SLACK = 1e-8
ENVELOPE_RTOL = 1e-6
ERROR_BOUND_SLACK = 1e-8
CERTIFICATE_MARGIN = 0.05


class FlowConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(gt=0)
    x0: list[float] = Field(min_length=1)
    h: float = Field(default=1e-3, gt=0)
    horizon: float = Field(gt=0)
    integrator: Literal["rk4", "explicit_euler"] = "rk4"
    sample_stride: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def _step_within_horizon(self) -> "FlowConfig":
        if self.h > self.horizon:
            raise ValueError("step size h must not exceed the horizon")
        return self

    @property
    def steps(self) -> int:
        return int(math.ceil(self.horizon / self.h - 1e-9))

    def validate_against(self, lipschitz: Optional[float]) -> None:
        if lipschitz is not None and self.lam * lipschitz >= 1.0:
            raise PreconditionError(f"flow needs lambda*L < 1, got {self.lam * lipschitz:.4g}")


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[Vector] = field(default_factory=list)
    dist_ref: list[float] = field(default_factory=list)
    gap: list[float] = field(default_factory=list)

    @property
    def lyapunov(self) -> list[float]:
        return [d * d for d in self.dist_ref]

    @property
    def final_state(self) -> Vector:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.times)


def _shadow(op: OperatorSpec, feasible: FeasibleSet, lam: float, x: Vector) -> tuple[Vector, Vector, Vector]:
    Fx = op(x)
    y = project(feasible, x - lam * Fx)
    return Fx, y, op(y)


def vector_field(op: OperatorSpec, feasible: FeasibleSet, lam: float, x) -> Vector:
    if not lam > 0:
        raise PreconditionError("lambda must be positive")
    x = as_vector(x, dim=op.dim, name="x")
    Fx, y, Fy = _shadow(op, feasible, lam, x)
    return -x + y + lam * (Fx - Fy)


def euler_step(op: OperatorSpec, feasible: FeasibleSet, lam: float, x: Vector, h: float) -> Vector:
    """x + h * field(x), evaluated as the relaxed FBF update with rho = h."""
    Fx, y, Fy = _shadow(op, feasible, lam, x)
    return h * (y + lam * (Fx - Fy)) + (1.0 - h) * x


def rk4_step(op: OperatorSpec, feasible: FeasibleSet, lam: float, x: Vector, h: float) -> Vector:
    k1 = vector_field(op, feasible, lam, x)
    k2 = vector_field(op, feasible, lam, x + 0.5 * h * k1)
    k3 = vector_field(op, feasible, lam, x + 0.5 * h * k2)
    k4 = vector_field(op, feasible, lam, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _gap(op: OperatorSpec, feasible: FeasibleSet, lam: float, x: Vector) -> float:
    return float(np.linalg.norm(x - project(feasible, x - lam * op(x))))


def integrate(
    config: FlowConfig,
    op: OperatorSpec,
    feasible: FeasibleSet,
    x_ref=None,
    *,
    lipschitz: Optional[float] = None,
) -> Trajectory:
    """Fixed-step integration recording t = 0, every sample_stride-th step and the final step."""
    config.validate_against(lipschitz)
    reference = as_vector(x_ref, dim=op.dim, name="x_ref") if x_ref is not None else None
    step = rk4_step if config.integrator == "rk4" else euler_step
    lam, h = config.lam, config.h
    x = as_vector(config.x0, dim=op.dim, name="x0")
    trajectory = Trajectory()

    def record(t: float, state: Vector) -> None:
        trajectory.times.append(t)
        trajectory.states.append(state.copy())
        trajectory.dist_ref.append(float(np.linalg.norm(state - reference)) if reference is not None else math.nan)
        trajectory.gap.append(_gap(op, feasible, lam, state))

    total = config.steps
    logger.debug("integrate %s: lambda=%.6g h=%g steps=%d", config.integrator, lam, h, total)
    record(0.0, x)
    for k in range(1, total + 1):
        t = min(k * h, config.horizon)
        try:
            x = step(op, feasible, lam, x, t - (k - 1) * h if k == total else h)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError("non-finite state")
            if k % config.sample_stride == 0 or k == total:
                record(t, x)
        except (NonFiniteError, DomainError) as exc:
            raise DivergenceError(f"trajectory failed at t={t:.6g}: {exc}", state=x, time=t) from exc
    return trajectory


def exp_rate_alpha(lam: float, lipschitz: float, gamma: float) -> float:
    """Decay rate alpha = 2 (1 - lam L) (lam gamma / (1 + lam L + lam gamma))^2."""
    if not (lam > 0 and lipschitz > 0 and lam * lipschitz < 1):
        raise PreconditionError("exponential rate needs 0 < lambda < 1/L")
    if not gamma > 0:
        raise PreconditionError("exponential rate needs gamma > 0")
    ratio = lam * gamma / (1.0 + lam * lipschitz + lam * gamma)
    return 2.0 * (1.0 - lam * lipschitz) * ratio * ratio


def error_bound_factor(lam: float, lipschitz: float, gamma: float) -> float:
    """(1 + lam L + lam gamma) / (lam gamma): ||x - x*|| <= factor * ||x - y||."""
    if not (lam > 0 and gamma > 0 and lipschitz >= 0):
        raise PreconditionError("error bound needs lambda > 0, gamma > 0, L >= 0")
    return (1.0 + lam * lipschitz + lam * gamma) / (lam * gamma)


def certified_constants(lipschitz: float, gamma: float, margin: float = CERTIFICATE_MARGIN) -> tuple[float, float]:
    """Estimated (L, gamma) moved by `margin` in the direction that weakens any bound built on them."""
    return lipschitz * (1.0 + margin), gamma * (1.0 - margin)


def envelope_alpha(lam: float, lipschitz: float, gamma: float, margin: float = CERTIFICATE_MARGIN) -> float:
    L_c, gamma_c = certified_constants(lipschitz, gamma, margin)
    if lam * L_c >= 1.0 or gamma_c <= 0.0:
        return 0.0
    return exp_rate_alpha(lam, L_c, gamma_c)


def envelope_violations(trajectory: Trajectory, alpha: float, rtol: float = ENVELOPE_RTOL) -> int:
    d0 = trajectory.dist_ref[0]
    count = 0
    for t, d in zip(trajectory.times, trajectory.dist_ref):
        if d * d > d0 * d0 * math.exp(-alpha * t) * (1.0 + rtol):
            count += 1
    return count


def lyapunov_violations(trajectory: Trajectory, slack: float = LYAPUNOV_SLACK) -> int:
    values = trajectory.lyapunov
    return sum(1 for prev, cur in zip(values, values[1:]) if cur > prev + slack)


def error_bound_violations(trajectory: Trajectory, lam: float, lipschitz: float, gamma: float, slack: float = ERROR_BOUND_SLACK) -> int:
    factor = error_bound_factor(lam, lipschitz, gamma)
    return sum(1 for d, g in zip(trajectory.dist_ref, trajectory.gap) if d > factor * g + slack)
