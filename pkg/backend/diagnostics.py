"""
Per-iteration records, run summaries, rate formulas and trace certificates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from errors import PreconditionError

TRACE_COLUMNS = ("iter", "lambda", "rho", "residual", "dist_ref", "step_norm", "f_evals", "proj_calls", "elapsed_ns")
VIOLATION_SLACK = 1e-8
RATE_SLACK = 1e-10


@dataclass(frozen=True)
class TraceRow:
    iter: int
    lambda_: float
    rho: float
    residual: float
    dist_ref: float
    step_norm: float
    f_evals: int
    proj_calls: int
    elapsed_ns: int

    def as_record(self) -> dict:
        return {
            "iter": self.iter,
            "lambda": self.lambda_,
            "rho": self.rho,
            "residual": self.residual,
            "dist_ref": self.dist_ref,
            "step_norm": self.step_norm,
            "f_evals": self.f_evals,
            "proj_calls": self.proj_calls,
            "elapsed_ns": self.elapsed_ns,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Union[str, float, int]]) -> "TraceRow":
        return cls(
            iter=int(record["iter"]),
            lambda_=float(record["lambda"]),
            rho=float(record["rho"]),
            residual=float(record["residual"]),
            dist_ref=float(record["dist_ref"]),
            step_norm=float(record["step_norm"]),
            f_evals=int(record["f_evals"]),
            proj_calls=int(record["proj_calls"]),
            elapsed_ns=int(record["elapsed_ns"]),
        )

    def same_values(self, other: "TraceRow") -> bool:
        """Equality on everything but elapsed_ns, treating NaN as equal to NaN."""
        for f in fields(self):
            if f.name == "elapsed_ns":
                continue
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            if isinstance(mine, float) and math.isnan(mine) and math.isnan(theirs):
                continue
            if mine != theirs:
                return False
        return True


def _finite_or_none(value: float) -> Optional[float]:
    return value if value is not None and math.isfinite(value) else None


class RunReport(BaseModel):
    iterations: int = 0
    final_residual: Optional[float] = 0.0
    final_dist_ref: Optional[float] = None
    total_f_evals: int = 0
    total_proj_calls: int = 0
    wall_ns: int = 0
    empty: bool = True
    status: Optional[str] = None
    method: Optional[str] = None
    x_final: Optional[list[float]] = None
    initial_dist_ref: Optional[float] = None
    final_lambda: Optional[float] = None


def summarize(trace: Sequence[TraceRow]) -> RunReport:
    if not trace:
        return RunReport()
    last = trace[-1]
    return RunReport(
        iterations=len(trace),
        final_residual=_finite_or_none(last.residual),
        final_dist_ref=_finite_or_none(last.dist_ref),
        total_f_evals=last.f_evals,
        total_proj_calls=last.proj_calls,
        wall_ns=last.elapsed_ns,
        empty=False,
        final_lambda=last.lambda_,
    )


def linear_rate_delta(lam: float, lipschitz: float, gamma: float, rho: float) -> float:
    """Per-iteration contraction factor for strongly pseudo-monotone problems:
    sqrt(1 - rho (1 - lam^2 L^2) (lam gamma / (1 + lam L + lam gamma))^2)."""
    if not (lam > 0 and lipschitz > 0 and lam * lipschitz < 1):
        raise PreconditionError("linear rate needs 0 < lambda < 1/L")
    if not gamma > 0:
        raise PreconditionError("linear rate needs gamma > 0")
    if not 0 < rho <= 1:
        raise PreconditionError("linear rate needs rho in (0, 1]")
    ratio = lam * gamma / (1.0 + lam * lipschitz + lam * gamma)
    return math.sqrt(1.0 - rho * (1.0 - (lam * lipschitz) ** 2) * ratio * ratio)


def _delta_or_none(lam: float, lipschitz: Optional[float], gamma: float, rho: float) -> Optional[float]:
    if lipschitz is None:
        return None
    try:
        return linear_rate_delta(lam, lipschitz, gamma, rho)
    except PreconditionError:
        return None


class RateReport(BaseModel):
    delta_theoretical: list[Optional[float]] = Field(default_factory=list)
    delta_empirical: Optional[float] = None
    fejer_violations: int = 0
    prop32_violations: int = 0
    rate_violations: int = 0
    rows_checked: int = 0

    @property
    def max_delta(self) -> Optional[float]:
        known = [d for d in self.delta_theoretical if d is not None]
        return max(known) if known else None


def fit_rate(iters: Sequence[int], dists: Sequence[float]) -> Optional[float]:
    """Geometric factor from a least-squares fit of log(dist) on the tail half."""
    pairs = [(k, d) for k, d in zip(iters, dists) if math.isfinite(d) and d > 0]
    tail = pairs[len(pairs) // 2:]
    if len(tail) < 2:
        return None
    ks = np.array([k for k, _ in tail], dtype=np.float64)
    logs = np.log(np.array([d for _, d in tail]))
    slope = np.polyfit(ks, logs, 1)[0]
    return float(np.exp(slope))


def certify_trace(
    trace: Sequence[TraceRow],
    lipschitz: Optional[float] = None,
    gamma: float = 0.0,
    *,
    lam: Optional[float] = None,
    rho_schedule: Optional[Union[Sequence[float], Callable[[int], float]]] = None,
    initial_dist_ref: Optional[float] = None,
    mu: Optional[float] = None,
) -> RateReport:
    """Fejér, key-inequality and linear-rate checks over a recorded trace.

    The key inequality is checked in the form available from the trace
    columns: ||x_{n+1} - x*||^2 <= ||x_n - x*||^2 - rho (1 - lam^2 L^2) ||y_n - x_n||^2,
    which follows from the full inequality whenever rho is in [0, 1]. Without L
    and with an adaptive mu, (1 - lam_n^2 mu^2 / lam_{n+1}^2) replaces (1 - lam^2 L^2).
    Violations are counted, never raised.
    """
    report = RateReport()
    if not trace:
        return report

    def rho_at(i: int, row: TraceRow) -> float:
        if rho_schedule is None:
            return row.rho
        if callable(rho_schedule):
            return rho_schedule(i)
        return rho_schedule[min(i, len(rho_schedule) - 1)]

    prev = initial_dist_ref
    for i, row in enumerate(trace):
        step_lam = lam if lam is not None else row.lambda_
        rho = rho_at(i, row)
        report.delta_theoretical.append(_delta_or_none(step_lam, lipschitz, gamma, rho))
        dist = row.dist_ref
        if prev is None or not (math.isfinite(prev) and math.isfinite(dist)):
            prev = dist
            continue
        report.rows_checked += 1
        if dist > prev + VIOLATION_SLACK:
            report.fejer_violations += 1
        if 0.0 <= rho <= 1.0:
            if lipschitz is not None:
                factor = 1.0 - (step_lam * lipschitz) ** 2
            elif mu is not None:
                next_lam = trace[i + 1].lambda_ if i + 1 < len(trace) else row.lambda_
                factor = 1.0 - (row.lambda_ * mu / next_lam) ** 2
            else:
                factor = None
            if factor is not None:
                bound = prev * prev - rho * factor * row.step_norm ** 2
                if dist * dist > bound + VIOLATION_SLACK:
                    report.prop32_violations += 1
        delta = report.delta_theoretical[-1]
        if delta is not None and dist > delta * prev + RATE_SLACK:
            report.rate_violations += 1
        prev = dist

    report.delta_empirical = fit_rate([r.iter for r in trace], [r.dist_ref for r in trace])
    return report
