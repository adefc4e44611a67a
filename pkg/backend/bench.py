"""
Benchmark commands: run specifications, stepsize resolution against problem
constants, and the solve / sweep-rho / compare / flow / certify / list-problems
commands with their artifacts and exit codes.
"""
from __future__ import annotations

import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import artifacts
from config import get_settings
from database import try_record_run
from diagnostics import RunReport, TraceRow, certify_trace, summarize
from errors import DivergenceError, PreconditionError, VIBenchError
from flow import FlowConfig, envelope_alpha, envelope_violations, integrate, lyapunov_violations
from registry import ProblemInstance, get_problem, problem_names, PROBLEMS
from solvers import (
    AdaptiveStep,
    ConstantRho,
    DistToRefBelow,
    ExactTermination,
    FixedStep,
    Method,
    ResidualBelow,
    SequenceRho,
    SolveResult,
    SolverConfig,
    solve,
)
from tracing import flush, run_span

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MAX_ITER = 2
EXIT_DIVERGED = 3
STATUS_EXIT = {"solved_exact": EXIT_OK, "tol_reached": EXIT_OK, "max_iter": EXIT_MAX_ITER, "diverged": EXIT_DIVERGED}

RELATIVE_LAMBDA = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*/\s*L\s*$")
METHOD_ALIASES = {
    "fbf": ("fbf", "fixed"),
    "fbf-fixed": ("fbf", "fixed"),
    "fbf-adaptive": ("fbf", "adaptive"),
    "extragradient": ("extragradient", "fixed"),
    "subgradient-extragradient": ("subgradient_extragradient", "fixed"),
    "subgradient_extragradient": ("subgradient_extragradient", "fixed"),
    "projected-gradient": ("projected_gradient", "fixed"),
    "projected_gradient": ("projected_gradient", "fixed"),
}
STOP_ASSUMPTION = "stop rule ||x_n - x_ref|| <= tol against the registry reference solution"
TRACE_COLUMN_NOTES = {
    "residual": "natural residual ||x - P_C(x - lambda F(x))|| of the previous iterate at the lambda used",
    "step_norm": "||x_n - y_n||",
}

LambdaValue = Union[float, str]


class SolverSpec(BaseModel):
    """Solver section of a run specification, with stepsizes relative to L allowed."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    method: Method = "fbf"
    lam: LambdaValue = Field(default="0.5/L", alias="lambda")
    lambda_mode: Literal["fixed", "adaptive"] = "fixed"
    mu: float = Field(default=0.9, gt=0, lt=1)
    rho: Union[float, list[float]] = 1.0
    x0: Optional[list[float]] = None
    max_iter: int = Field(default=10_000, ge=0)
    stop: Literal["dist_ref", "residual", "exact"] = "dist_ref"
    tol: float = Field(default=1e-6, gt=0)
    seed: int = Field(default=42, ge=0)
    allow_large_step: bool = False

    @field_validator("lam")
    @classmethod
    def _lambda_form(cls, value: LambdaValue) -> LambdaValue:
        if isinstance(value, str):
            if RELATIVE_LAMBDA.match(value) is None:
                try:
                    float(value)
                except ValueError:
                    raise ValueError(f"lambda must be a number or of the form 'c/L', got {value!r}") from None
        return value


class RunSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: str
    solver: SolverSpec = Field(default_factory=SolverSpec)
    output: Optional[str] = None
    emit: Literal["csv", "json", "both"] = "both"

    @field_validator("problem")
    @classmethod
    def _known_problem(cls, value: str) -> str:
        if value not in PROBLEMS:
            raise ValueError(f"unknown problem '{value}'; valid names: {', '.join(problem_names())}")
        return value


def load_runspec(path: Union[str, Path]) -> RunSpec:
    return RunSpec.model_validate_json(Path(path).read_text())


def resolve_lambda(value: LambdaValue, lipschitz: Optional[float]) -> float:
    """Absolute stepsize from a number or the form 'c/L'."""
    if isinstance(value, str):
        match = RELATIVE_LAMBDA.match(value)
        if match is None:
            lam = float(value)
        else:
            if lipschitz is None:
                raise PreconditionError(f"lambda '{value}' needs a Lipschitz constant")
            lam = float(match.group(1)) / lipschitz
    else:
        lam = float(value)
    if not lam > 0:
        raise PreconditionError(f"lambda must be positive, got {lam}")
    return lam


def to_solver_config(spec: SolverSpec, problem: ProblemInstance) -> SolverConfig:
    lam = resolve_lambda(spec.lam, problem.lipschitz)
    lambda_mode = AdaptiveStep(lambda0=lam, mu=spec.mu) if spec.lambda_mode == "adaptive" else FixedStep(lam=lam)
    rho = SequenceRho(values=spec.rho) if isinstance(spec.rho, list) else ConstantRho(rho=spec.rho)
    if spec.stop == "dist_ref":
        if problem.x_ref is None:
            raise PreconditionError(f"problem {problem.name} has no reference solution for a dist_ref stop")
        stop = DistToRefBelow(eps=spec.tol, x_ref=problem.x_ref.tolist())
    elif spec.stop == "residual":
        stop = ResidualBelow(eps=spec.tol)
    else:
        stop = ExactTermination()
    return SolverConfig(
        method=spec.method,
        lambda_mode=lambda_mode,
        rho_schedule=rho,
        x0=spec.x0 if spec.x0 is not None else problem.x0.tolist(),
        max_iter=spec.max_iter,
        stop=stop,
        seed=spec.seed,
        allow_large_step=spec.allow_large_step,
    )


@dataclass
class RunOutcome:
    """A finished (or diverged) run with everything needed to write its artifacts."""

    problem: ProblemInstance
    spec: SolverSpec
    lam: float
    report: RunReport
    trace: list[TraceRow]
    error: Optional[str] = None

    @property
    def status(self) -> str:
        return self.report.status or "max_iter"

    @property
    def exit_code(self) -> int:
        return STATUS_EXIT[self.status]

    def payload(self, runspec: Optional[RunSpec] = None) -> dict:
        constants = self.problem.constants()
        constants.update({"lambda": self.lam, "seed": self.spec.seed, "mu": self.spec.mu if self.spec.lambda_mode == "adaptive" else None})
        payload = {
            "runspec": (runspec or RunSpec(problem=self.problem.name, solver=self.spec)).model_dump(by_alias=True, mode="json"),
            "report": self.report.model_dump(mode="json"),
            "constants": constants,
            "assumptions": [STOP_ASSUMPTION] if self.spec.stop == "dist_ref" else [],
            "columns": TRACE_COLUMN_NOTES,
        }
        if self.error:
            payload["error"] = self.error
        return payload


def run_problem(spec: SolverSpec, problem: ProblemInstance, *, on_step=None) -> RunOutcome:
    """Solve one problem, turning divergence into a 'diverged' outcome."""
    config = to_solver_config(spec, problem)
    lam = config.initial_lambda
    span_input = spec.model_dump(by_alias=True, mode="json")
    with run_span(f"solve:{problem.name}", input=span_input, metadata=problem.constants()) as span:
        try:
            result: SolveResult = solve(config, problem.op, problem.feasible, lipschitz=problem.lipschitz, x_ref=problem.x_ref, on_step=on_step)
        except DivergenceError as exc:
            logger.error("%s/%s diverged: %s", problem.name, spec.method, exc)
            report = summarize(exc.trace or []).model_copy(update={"status": "diverged", "method": spec.method})
            span.update(output=report.model_dump(mode="json"))
            return RunOutcome(problem, spec, lam, report, list(exc.trace or []), error=str(exc))
        span.update(output=result.report.model_dump(mode="json"))
    return RunOutcome(problem, spec, lam, result.report, result.trace)


def _default_prefix(*parts: str) -> str:
    return str(get_settings().output_dir / "_".join(parts))


def write_outcome(outcome: RunOutcome, prefix: Union[str, Path], emit: str = "both", runspec: Optional[RunSpec] = None) -> dict[str, Path]:
    paths = artifacts.artifact_paths(prefix)
    written = {}
    if emit in ("csv", "both"):
        written["trace"] = artifacts.write_trace(paths["trace"], outcome.trace)
    if emit in ("json", "both"):
        written["report"] = artifacts.write_json(paths["report"], outcome.payload(runspec))
    return written


def _record(outcome: RunOutcome, runspec: Optional[RunSpec] = None) -> Optional[int]:
    return try_record_run(
        outcome.problem.name, outcome.spec.method, outcome.status, outcome.report.iterations, outcome.payload(runspec)
    )


def _worst(codes: Sequence[int]) -> int:
    return max(codes, default=EXIT_OK)


T = TypeVar("T")
R = TypeVar("R")


def run_cells(fn: Callable[[T], R], cells: Sequence[T], workers: int = 1) -> list[R]:
    """Map over independent cells, preserving input order regardless of parallelism."""
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, cells))
    return [fn(cell) for cell in cells]


def _fmt(value: float) -> str:
    return f"{value:g}"


def cmd_solve(runspec: RunSpec, *, record: bool = False) -> int:
    problem = get_problem(runspec.problem)
    outcome = run_problem(runspec.solver, problem)
    prefix = runspec.output or _default_prefix(problem.name, runspec.solver.method)
    written = write_outcome(outcome, prefix, runspec.emit, runspec)
    if record:
        _record(outcome, runspec)
    flush()
    logger.info(
        "%s/%s: %s after %d iterations (%s)",
        problem.name, runspec.solver.method, outcome.status, outcome.report.iterations,
        ", ".join(str(p) for p in written.values()),
    )
    return outcome.exit_code


def parse_rho_list(text: str) -> list[float]:
    """'0.5,0.7' or a range 'start:stop:step' (stop included)."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError(f"rho range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        count = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 12) for k in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def cmd_sweep_rho(
    problem_name: str,
    rhos: Sequence[float],
    base: Optional[SolverSpec] = None,
    output: Optional[str] = None,
    *,
    workers: int = 1,
    record: bool = False,
) -> int:
    problem = get_problem(problem_name)
    base = base or SolverSpec()
    prefix = output or _default_prefix(problem.name, "sweep_rho")
    cells = sorted(set(float(r) for r in rhos))
    if not cells:
        raise PreconditionError("rho list is empty")

    def run_cell(rho: float) -> tuple[float, RunOutcome]:
        return rho, run_problem(base.model_copy(update={"rho": rho}), problem)

    with run_span(f"sweep_rho:{problem.name}", input={"rhos": cells, "solver": base.model_dump(by_alias=True, mode="json")}) as span:
        results = sorted(run_cells(run_cell, cells, workers), key=lambda item: item[0])
        rows = []
        for rho, outcome in results:
            write_outcome(outcome, f"{prefix}_rho{_fmt(rho)}")
            if record:
                _record(outcome)
            rows.append((rho, outcome.report.iterations, outcome.report.wall_ns))
            logger.info("rho=%s: %s after %d iterations", _fmt(rho), outcome.status, outcome.report.iterations)
        artifacts.write_table(artifacts.artifact_paths(prefix)["summary"], ("rho", "iterations", "wall_ns"), rows)
        span.update(output={"iterations": {_fmt(r): it for r, it, _ in rows}})
    flush()
    return _worst([o.exit_code for _, o in results])


def parse_method(label: str, base: SolverSpec) -> tuple[str, SolverSpec]:
    """'name' or 'name@lambda' -> (label, spec) with the method's stepsize mode applied."""
    name, _, lam = label.partition("@")
    if name not in METHOD_ALIASES:
        raise ValueError(f"unknown method '{name}'; valid: {', '.join(sorted(METHOD_ALIASES))}")
    method, mode = METHOD_ALIASES[name]
    update: dict = {"method": method, "lambda_mode": mode}
    if lam:
        update["lam"] = lam
    if method != "fbf":
        update["rho"] = 1.0
    return label, SolverSpec.model_validate({**base.model_dump(), **update})


def cmd_compare(
    problem_name: str,
    methods: Sequence[str],
    base: Optional[SolverSpec] = None,
    output: Optional[str] = None,
    *,
    workers: int = 1,
    record: bool = False,
) -> int:
    problem = get_problem(problem_name)
    base = base or SolverSpec()
    cells = sorted((parse_method(m, base) for m in methods), key=lambda cell: cell[0])
    if not cells:
        raise PreconditionError("method list is empty")
    prefix = output or _default_prefix(problem.name, "compare")

    def run_cell(cell: tuple[str, SolverSpec]) -> tuple[str, RunOutcome]:
        return cell[0], run_problem(cell[1], problem)

    header = ("method", "lambda", "iterations", "f_evals", "proj_calls", "final_dist_ref", "status", "wall_ns")
    with run_span(f"compare:{problem.name}", input={"methods": [c[0] for c in cells]}) as span:
        results = run_cells(run_cell, cells, workers)
        rows = []
        for label, outcome in results:
            write_outcome(outcome, f"{prefix}_{re.sub(r'[^A-Za-z0-9_.-]', '_', label)}")
            if record:
                _record(outcome)
            r = outcome.report
            final = r.final_dist_ref if r.final_dist_ref is not None else ""
            rows.append((label, outcome.lam, r.iterations, r.total_f_evals, r.total_proj_calls, final, outcome.status, r.wall_ns))
            logger.info("%s: %s after %d iterations", label, outcome.status, r.iterations)
        artifacts.write_table(artifacts.artifact_paths(prefix)["summary"], header, rows)
        span.update(output={label: o.report.iterations for label, o in results})
    flush()
    return _worst([o.exit_code for _, o in results])


class FlowRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: str
    lambdas: list[LambdaValue] = Field(default_factory=lambda: ["0.99/L", "0.8/L", "0.5/L"], min_length=1)
    horizon: float = Field(default=200.0, gt=0)
    h: float = Field(default=1e-3, gt=0)
    integrator: Literal["rk4", "explicit_euler"] = "rk4"
    sample_stride: int = Field(default=100, ge=1)
    x0: Optional[list[float]] = None


def cmd_flow(request: FlowRequest, output: Optional[str] = None, *, workers: int = 1) -> int:
    problem = get_problem(request.problem)
    prefix = output or _default_prefix(problem.name, "flow")
    x0 = request.x0 if request.x0 is not None else problem.x0.tolist()
    cells = sorted({str(v): resolve_lambda(v, problem.lipschitz) for v in request.lambdas}.items(), key=lambda c: c[1])

    def run_cell(cell: tuple[str, float]):
        label, lam = cell
        config = FlowConfig(
            lam=lam, x0=x0, h=request.h, horizon=request.horizon,
            integrator=request.integrator, sample_stride=request.sample_stride,
        )
        try:
            return label, lam, integrate(config, problem.op, problem.feasible, problem.x_ref, lipschitz=problem.lipschitz), None
        except DivergenceError as exc:
            return label, lam, None, exc

    header = ("lambda", "final_dist_ref", "final_gap", "alpha", "envelope_violations", "lyapunov_violations", "status")
    codes = []
    with run_span(f"flow:{problem.name}", input=request.model_dump(mode="json")) as span:
        rows = []
        for label, lam, trajectory, error in run_cells(run_cell, cells, workers):
            if error is not None:
                logger.error("flow lambda=%s diverged: %s", label, error)
                rows.append((lam, "", "", "", "", "", "diverged"))
                codes.append(EXIT_DIVERGED)
                continue
            tag = re.sub(r"[^A-Za-z0-9_.-]", "_", label)
            artifacts.write_trajectory(f"{prefix}_lambda{tag}_trajectory.csv", trajectory)
            alpha = envelope_alpha(lam, problem.lipschitz_bound, problem.gamma) if problem.gamma and problem.lipschitz_bound else 0.0
            has_ref = problem.x_ref is not None
            rows.append((
                lam,
                trajectory.dist_ref[-1] if has_ref else "",
                trajectory.gap[-1],
                alpha,
                envelope_violations(trajectory, alpha) if has_ref else "",
                lyapunov_violations(trajectory) if has_ref else "",
                "ok",
            ))
            codes.append(EXIT_OK)
        artifacts.write_table(artifacts.artifact_paths(prefix)["summary"], header, rows)
        span.update(output={"rows": len(rows)})
    flush()
    return _worst(codes)


def _sibling_report(trace_path: Path) -> Optional[dict]:
    name = trace_path.name
    if not name.endswith("_trace.csv"):
        return None
    candidate = trace_path.with_name(name[: -len("_trace.csv")] + "_report.json")
    return artifacts.read_json(candidate) if candidate.exists() else None


def cmd_certify(
    trace_path: Union[str, Path],
    problem_name: Optional[str] = None,
    output: Optional[str] = None,
    *,
    stream=None,
) -> int:
    """Run the trace certificates and print the RateReport as JSON."""
    trace_path = Path(trace_path)
    trace = artifacts.read_trace(trace_path)
    sibling = _sibling_report(trace_path)
    if problem_name is None and sibling is not None:
        problem_name = sibling["runspec"]["problem"]
    lipschitz = gamma = mu = initial = None
    if problem_name is not None:
        problem = get_problem(problem_name)
        lipschitz, gamma = problem.lipschitz_bound, problem.gamma
    if sibling is not None:
        initial = sibling["report"].get("initial_dist_ref")
        solver = sibling["runspec"]["solver"]
        if solver.get("lambda_mode") == "adaptive":
            mu, lipschitz = solver.get("mu"), None
    report = certify_trace(trace, lipschitz, gamma or 0.0, initial_dist_ref=initial, mu=mu)
    payload = report.model_dump(mode="json")
    payload["max_delta"] = report.max_delta
    text = json.dumps(payload, indent=2)
    print(text, file=stream or sys.stdout)
    if output:
        artifacts.write_json(output, payload)
    return EXIT_OK


def cmd_list_problems(*, constants: bool = False, stream=None) -> int:
    out = stream or sys.stdout
    for name in problem_names():
        if constants:
            print(json.dumps(get_problem(name).summary()), file=out)
        else:
            spec = PROBLEMS[name]
            print(f"{name}\t{len(spec.x0)}\t{spec.description}", file=out)
    return EXIT_OK


def guarded(command: Callable[[], int]) -> int:
    """Run a command, mapping configuration errors to exit 1 with a message on stderr."""
    try:
        return command()
    except DivergenceError as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGED
    except (ValidationError, VIBenchError, ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
