"""
Projection-type methods for VI(F, C): relaxed forward-backward-forward with a
fixed or adaptive stepsize, and the extragradient, subgradient-extragradient
and projected-gradient baselines.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Annotated, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from diagnostics import RunReport, TraceRow, summarize
from errors import DivergenceError, DomainError, NonFiniteError, PreconditionError
from geometry import FeasibleSet, Halfspace, Vector, as_vector, project
from operators import OperatorSpec, evaluate

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
EXACT_TOL_FACTOR = 1e-13
ADAPTIVE_ZERO_TOL = 1e-15
# failures inside a step that end the run as a divergence
LEFT_DOMAIN = (NonFiniteError, DomainError)

Method = Literal["fbf", "extragradient", "subgradient_extragradient", "projected_gradient"]
Status = Literal["running", "solved_exact", "tol_reached", "max_iter", "diverged"]


class FixedStep(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["fixed"] = "fixed"
    lam: float = Field(gt=0)


class AdaptiveStep(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["adaptive"] = "adaptive"
    lambda0: float = Field(gt=0)
    mu: float = Field(gt=0, lt=1)


class ConstantRho(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["constant"] = "constant"
    rho: float = Field(default=1.0, ge=0, lt=2)

    def at(self, n: int) -> float:
        return self.rho

    @property
    def largest(self) -> float:
        return self.rho


class SequenceRho(BaseModel):
    """Explicit relaxation sequence; past its end the last value repeats."""

    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["sequence"] = "sequence"
    values: list[float] = Field(min_length=1)

    @field_validator("values")
    @classmethod
    def _in_range(cls, values: list[float]) -> list[float]:
        if any(not (0.0 <= v < 2.0) for v in values):
            raise ValueError("relaxation parameters must lie in [0, 2)")
        return values

    def at(self, n: int) -> float:
        return self.values[min(n, len(self.values) - 1)]

    @property
    def largest(self) -> float:
        return max(self.values)


class ResidualBelow(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["residual"] = "residual"
    eps: float = Field(gt=0)


class DistToRefBelow(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["dist_ref"] = "dist_ref"
    eps: float = Field(gt=0)
    x_ref: list[float] = Field(min_length=1)


class ExactTermination(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["exact"] = "exact"


LambdaMode = Annotated[Union[FixedStep, AdaptiveStep], Field(discriminator="kind")]
RhoSchedule = Annotated[Union[ConstantRho, SequenceRho], Field(discriminator="kind")]
StopRule = Annotated[Union[ResidualBelow, DistToRefBelow, ExactTermination], Field(discriminator="kind")]


def max_overrelaxation(lam: float, lipschitz: float) -> float:
    """Upper limit 2 - 2 lam L / (1 + lam L) for overrelaxed constant rho."""
    product = lam * lipschitz
    return 2.0 - 2.0 * product / (1.0 + product)


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Method = "fbf"
    lambda_mode: LambdaMode
    rho_schedule: RhoSchedule = Field(default_factory=ConstantRho)
    x0: list[float] = Field(min_length=1)
    max_iter: int = Field(default=10_000, ge=0)
    stop: StopRule = Field(default_factory=ExactTermination)
    seed: int = Field(default=42, ge=0)
    allow_large_step: bool = False

    @model_validator(mode="after")
    def _method_options(self) -> "SolverConfig":
        if self.method != "fbf":
            if isinstance(self.lambda_mode, AdaptiveStep):
                raise ValueError(f"adaptive stepsizes are only available for fbf, not {self.method}")
            if isinstance(self.rho_schedule, SequenceRho) or self.rho_schedule.rho != 1.0:
                raise ValueError(f"relaxation is only available for fbf, not {self.method}")
        return self

    @property
    def initial_lambda(self) -> float:
        if isinstance(self.lambda_mode, FixedStep):
            return self.lambda_mode.lam
        return self.lambda_mode.lambda0

    def rho_at(self, n: int) -> float:
        return self.rho_schedule.at(n)

    def validate_against(self, lipschitz: Optional[float]) -> None:
        """Stepsize and relaxation checks that need a Lipschitz constant."""
        if lipschitz is None or self.allow_large_step:
            return
        if isinstance(self.lambda_mode, FixedStep):
            product = self.lambda_mode.lam * lipschitz
            if product >= 1.0:
                raise PreconditionError(
                    f"stepsize lambda*L = {product:.4g} >= 1; pass allow_large_step to override"
                )
        # adaptive stepsizes never exceed lambda0, and the limit only grows as lambda shrinks
        lam = self.initial_lambda
        largest = self.rho_schedule.largest
        if largest > 1.0 and largest >= max_overrelaxation(lam, lipschitz):
            raise PreconditionError(
                f"rho = {largest} exceeds the overrelaxation limit "
                f"{max_overrelaxation(lam, lipschitz):.6g} at lambda = {lam:.6g}"
            )


@dataclass(frozen=True)
class SolverState:
    n: int
    x: Vector
    lambda_n: float
    rho_n: float
    y: Optional[Vector] = None
    t: Optional[Vector] = None
    f_evals: int = 0
    proj_calls: int = 0
    status: Status = "running"

    @classmethod
    def initial(cls, config: SolverConfig, dim: int) -> "SolverState":
        return cls(n=0, x=as_vector(config.x0, dim=dim, name="x0"), lambda_n=config.initial_lambda, rho_n=config.rho_at(0))


def exact_tol(x: Vector) -> float:
    return EXACT_TOL_FACTOR * (1.0 + float(np.linalg.norm(x)))


def _guard(state: SolverState) -> SolverState:
    if not np.all(np.isfinite(state.x)) or float(np.linalg.norm(state.x)) > DIVERGENCE_NORM:
        raise DivergenceError(f"iterate diverged at n={state.n}", state=state)
    return state


def _require_running(state: SolverState) -> None:
    if state.status != "running":
        raise PreconditionError(f"cannot step a solver in status {state.status}")


def adaptive_lambda(lam: float, mu: float, x: Vector, y: Vector, Fx: Vector, Fy: Vector) -> float:
    """min(mu ||x - y|| / ||Fx - Fy||, lam), or lam when Fx == Fy."""
    if not 0.0 < mu < 1.0:
        raise PreconditionError("mu must lie in (0, 1)")
    if not lam > 0.0:
        raise PreconditionError("lambda must be positive")
    diff = Fx - Fy
    if np.all(np.abs(diff) <= ADAPTIVE_ZERO_TOL):
        return lam
    return min(mu * float(np.linalg.norm(x - y)) / float(np.linalg.norm(diff)), lam)


def _stopped(state: SolverState, y: Vector, f_evals: int, proj_calls: int) -> SolverState:
    return replace(state, n=state.n + 1, x=y, y=y, t=y, f_evals=f_evals, proj_calls=proj_calls, status="solved_exact")


def fbf_step(state: SolverState, op: OperatorSpec, feasible: FeasibleSet, config: SolverConfig) -> SolverState:
    _require_running(state)
    x, lam, rho = state.x, state.lambda_n, state.rho_n
    try:
        Fx = op(x)
        y = project(feasible, x - lam * Fx)
        Fy = op(y)
    except LEFT_DOMAIN as exc:
        raise DivergenceError(f"step failed at n={state.n}: {exc}", state=state) from exc
    f_evals, proj_calls = state.f_evals + 2, state.proj_calls + 1

    tol = exact_tol(x)
    if float(np.linalg.norm(y - x)) <= tol or float(np.linalg.norm(Fy)) <= tol:
        return _stopped(state, y, f_evals, proj_calls)

    t = y + lam * (Fx - Fy)
    x_next = rho * t + (1.0 - rho) * x
    next_lam = lam
    if isinstance(config.lambda_mode, AdaptiveStep):
        next_lam = adaptive_lambda(lam, config.lambda_mode.mu, x, y, Fx, Fy)
    return _guard(SolverState(state.n + 1, x_next, next_lam, rho, y, t, f_evals, proj_calls))


def extragradient_step(state: SolverState, op: OperatorSpec, feasible: FeasibleSet, config: Optional[SolverConfig] = None) -> SolverState:
    _require_running(state)
    x, lam = state.x, state.lambda_n
    try:
        y = project(feasible, x - lam * op(x))
        if float(np.linalg.norm(y - x)) <= exact_tol(x):
            return _stopped(state, y, state.f_evals + 1, state.proj_calls + 1)
        x_next = project(feasible, x - lam * op(y))
    except LEFT_DOMAIN as exc:
        raise DivergenceError(f"step failed at n={state.n}: {exc}", state=state) from exc
    return _guard(SolverState(state.n + 1, x_next, lam, state.rho_n, y, None, state.f_evals + 2, state.proj_calls + 2))


def subgradient_extragradient_step(
    state: SolverState, op: OperatorSpec, feasible: FeasibleSet, config: Optional[SolverConfig] = None
) -> SolverState:
    """Second projection goes onto the halfspace through y_n with normal
    x_n - lam F(x_n) - y_n. Only projections onto C are counted."""
    _require_running(state)
    x, lam = state.x, state.lambda_n
    try:
        forward = x - lam * op(x)
        y = project(feasible, forward)
        if float(np.linalg.norm(y - x)) <= exact_tol(x):
            return _stopped(state, y, state.f_evals + 1, state.proj_calls + 1)
        normal = forward - y
        cut = Halfspace(normal, float(normal @ y), allow_zero_normal=True)
        x_next = project(cut, x - lam * op(y))
    except LEFT_DOMAIN as exc:
        raise DivergenceError(f"step failed at n={state.n}: {exc}", state=state) from exc
    return _guard(SolverState(state.n + 1, x_next, lam, state.rho_n, y, None, state.f_evals + 2, state.proj_calls + 1))


def projected_gradient_step(
    state: SolverState, op: OperatorSpec, feasible: FeasibleSet, config: Optional[SolverConfig] = None
) -> SolverState:
    _require_running(state)
    x, lam = state.x, state.lambda_n
    try:
        x_next = project(feasible, x - lam * op(x))
    except LEFT_DOMAIN as exc:
        raise DivergenceError(f"step failed at n={state.n}: {exc}", state=state) from exc
    if float(np.linalg.norm(x_next - x)) <= exact_tol(x):
        return _stopped(state, x_next, state.f_evals + 1, state.proj_calls + 1)
    return _guard(SolverState(state.n + 1, x_next, lam, state.rho_n, x_next, None, state.f_evals + 1, state.proj_calls + 1))


STEPS: dict[str, Callable[..., SolverState]] = {
    "fbf": fbf_step,
    "extragradient": extragradient_step,
    "subgradient_extragradient": subgradient_extragradient_step,
    "projected_gradient": projected_gradient_step,
}


def natural_residual(op: OperatorSpec, feasible: FeasibleSet, x, lam: float) -> float:
    """||x - P_C(x - lam F(x))||; zero exactly at solutions."""
    if not lam > 0:
        raise PreconditionError("lambda must be positive")
    x = as_vector(x, dim=op.dim, name="x")
    return float(np.linalg.norm(x - project(feasible, x - lam * evaluate(op, x))))


@dataclass
class SolveResult:
    report: RunReport
    trace: list[TraceRow]
    state: SolverState

    @property
    def status(self) -> str:
        return self.state.status

    @property
    def solution(self) -> Vector:
        return self.state.x


StepCallback = Callable[[SolverState, SolverState], None]


def solve(
    config: SolverConfig,
    op: OperatorSpec,
    feasible: FeasibleSet,
    *,
    lipschitz: Optional[float] = None,
    x_ref=None,
    on_step: Optional[StepCallback] = None,
) -> SolveResult:
    """Run the configured method until a stop rule fires or max_iter is reached.

    Row k of the trace describes the step producing x_k: the lambda and rho used,
    ||x_{k-1} - y_{k-1}|| (step_norm), the distance of x_k to the reference point,
    and the natural residual ||x - P_C(x - lambda F(x))|| at x_{k-1} with lambda_{k-1}.
    Every method forms y_{k-1} as that projection, so the residual equals step_norm.
    A DivergenceError carries the rows recorded so far. An operator that leaves its
    domain mid-run counts as divergence; x0 outside the domain raises DomainError.
    """
    config.validate_against(lipschitz)
    if feasible.dim != op.dim:
        raise PreconditionError(f"operator dimension {op.dim} does not match set dimension {feasible.dim}")
    reference = None
    if x_ref is not None:
        reference = as_vector(x_ref, dim=op.dim, name="x_ref")
    elif isinstance(config.stop, DistToRefBelow):
        reference = as_vector(config.stop.x_ref, dim=op.dim, name="x_ref")

    state = SolverState.initial(config, op.dim)
    if config.max_iter > 0:
        op(state.x)
    step = STEPS[config.method]
    trace: list[TraceRow] = []
    initial_dist = float(np.linalg.norm(state.x - reference)) if reference is not None else None
    logger.debug("solve %s: dim=%d lambda0=%.6g max_iter=%d", config.method, op.dim, state.lambda_n, config.max_iter)

    started = time.perf_counter_ns()
    if isinstance(config.stop, DistToRefBelow) and initial_dist <= config.stop.eps:
        state = replace(state, status="tol_reached")
    for n in range(config.max_iter):
        if state.status != "running":
            break
        state = replace(state, rho_n=config.rho_at(n))
        try:
            nxt = step(state, op, feasible, config)
        except DivergenceError as exc:
            exc.trace = trace
            logger.debug("solve %s diverged at n=%d", config.method, n)
            raise
        step_norm = float(np.linalg.norm(state.x - nxt.y))
        dist = float(np.linalg.norm(nxt.x - reference)) if reference is not None else math.nan
        row = TraceRow(
            iter=n + 1,
            lambda_=state.lambda_n,
            rho=state.rho_n,
            residual=step_norm,
            dist_ref=dist,
            step_norm=step_norm,
            f_evals=nxt.f_evals,
            proj_calls=nxt.proj_calls,
            elapsed_ns=time.perf_counter_ns() - started,
        )
        trace.append(row)
        if on_step is not None:
            on_step(state, nxt)
        state = nxt
        if state.status != "running":
            break
        if isinstance(config.stop, ResidualBelow) and row.residual <= config.stop.eps:
            state = replace(state, status="tol_reached")
        elif isinstance(config.stop, DistToRefBelow) and dist <= config.stop.eps:
            state = replace(state, status="tol_reached")
    if state.status == "running":
        state = replace(state, status="max_iter")

    report = summarize(trace).model_copy(
        update={
            "status": state.status,
            "method": config.method,
            "x_final": state.x.tolist(),
            "initial_dist_ref": initial_dist,
            "final_lambda": state.lambda_n,
        }
    )
    logger.debug("solve %s finished: %s after %d iterations", config.method, state.status, len(trace))
    return SolveResult(report=report, trace=trace, state=state)
