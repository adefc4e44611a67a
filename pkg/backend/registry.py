"""
Built-in benchmark problems.

Each problem is declared statically (operator, set, start point, known
solution if any); the numeric constants (Lipschitz estimate over the enlarged
region, strong pseudo-monotonicity modulus) and the reference solution are
computed on first access and cached for the life of the process.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Literal, Optional

import numpy as np

from config import get_settings
from errors import ProblemNotFoundError
from geometry import Box, BoxLinear, FeasibleSet, Region, Vector, as_vector, enlarged_region
from operators import (
    FractionalGradient,
    GShape,
    OperatorAnalysis,
    OperatorSpec,
    PseudoAffine,
    Scalar1D,
    analyze,
    modulus_for,
)
from solvers import ConstantRho, ExactTermination, FixedStep, SolverConfig, natural_residual, solve

logger = logging.getLogger(__name__)

REFERENCE_RESIDUAL_TOL = 1e-8
REFERENCE_STEP_FACTOR = 0.5
STATED_LIPSCHITZ_SLACK = 1.05

POLYTOPE_M = [
    [5.0, -1.0, 2.0, 0.0, 2.0],
    [-1.0, 6.0, -1.0, 3.0, 0.0],
    [2.0, -1.0, 3.0, 0.0, 1.0],
    [0.0, 3.0, 0.0, 5.0, 0.0],
    [2.0, 0.0, 1.0, 0.0, 4.0],
]
PLANE_M = [[1.0, 0.0, -1.0], [0.0, 1.5, 0.0], [-1.0, 0.0, 2.0]]


@dataclass(frozen=True)
class ProblemDefinition:
    name: str
    description: str
    build: Callable[[], tuple[OperatorSpec, FeasibleSet]]
    x0: tuple[float, ...]
    known_solution: Optional[tuple[float, ...]] = None
    # published Lipschitz bound; replaces the estimate in stepsize recipes
    stated_lipschitz: Optional[float] = None
    # stepsize scale for `c/L` recipes when the published runs used one that is not a bound
    step_lipschitz: Optional[float] = None
    operator_class: Literal["monotone", "pseudo-monotone", "strongly-pseudo-monotone"] = "pseudo-monotone"


@dataclass(eq=False)
class ProblemInstance:
    name: str
    description: str
    op: OperatorSpec
    feasible: FeasibleSet
    region: Region
    x0: Vector
    x_ref: Optional[Vector]
    lipschitz: Optional[float]
    gamma: Optional[float]
    operator_class: str
    lipschitz_bound: Optional[float] = None
    lipschitz_source: Literal["stated", "calibrated", "estimated"] = "estimated"
    analysis: Optional[OperatorAnalysis] = None
    reference_source: Literal["known", "computed", "none"] = "none"
    reference_residual: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.op.dim

    def constants(self) -> dict:
        return {
            "lipschitz": self.lipschitz,
            "lipschitz_source": self.lipschitz_source,
            "lipschitz_bound": self.lipschitz_bound,
            "gamma": self.gamma,
            "lipschitz_estimate": self.analysis.lipschitz_estimate if self.analysis else None,
            "lipschitz_seed": self.analysis.seed if self.analysis else None,
            "lipschitz_samples": self.analysis.sample_count if self.analysis else None,
            "region": self.region.to_dict(),
            "x_ref": self.x_ref.tolist() if self.x_ref is not None else None,
            "reference_source": self.reference_source,
            "reference_residual": self.reference_residual,
        }

    def summary(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "dim": self.dim,
            "operator": type(self.op).__name__,
            "set": type(self.feasible).__name__,
            "operator_class": self.operator_class,
            "x0": self.x0.tolist(),
            "notes": list(self.notes),
            **self.constants(),
        }


def _polytope5() -> tuple[OperatorSpec, FeasibleSet]:
    op = PseudoAffine(POLYTOPE_M, [-1.0, 2.0, 1.0, 0.0, -1.0], GShape(alpha=0.1))
    return op, BoxLinear(np.zeros(5), np.full(5, 5.0), np.ones(5), 5.0, "<=")


def _fractional5() -> tuple[OperatorSpec, FeasibleSet]:
    op = FractionalGradient(
        POLYTOPE_M,
        a=[1.0, 2.0, -1.0, -2.0, 1.0],
        b=[1.0, 0.0, -1.0, 0.0, 1.0],
        c=-2.0,
        d=20.0,
    )
    return op, Box(np.ones(5), np.full(5, 3.0))


def _plane3() -> tuple[OperatorSpec, FeasibleSet]:
    op = PseudoAffine(PLANE_M, np.zeros(3), GShape(alpha=0.2))
    return op, BoxLinear(np.full(3, -5.0), np.full(3, 5.0), np.ones(3), 0.0, "=")


def _scalar_exp() -> tuple[OperatorSpec, FeasibleSet]:
    return Scalar1D("exp_bell"), Box([-5.0], [5.0])


def _scalar_exp_strong() -> tuple[OperatorSpec, FeasibleSet]:
    return Scalar1D("exp_bell_plus_linear", slope=0.1), Box([-5.0], [5.0])


PROBLEMS: dict[str, ProblemDefinition] = {
    d.name: d
    for d in (
        ProblemDefinition(
            "polytope5",
            "g(x)(Mx + p) with g = exp(-||x||^2) + 0.1 on {0 <= x <= 5, sum x <= 5}",
            _polytope5,
            x0=(1.0, 3.0, 2.0, 1.0, 4.0),
            # ||g(x*) M|| on the face active at x* is ~6.9; the published sweep counts match 7
            step_lipschitz=7.0,
            operator_class="strongly-pseudo-monotone",
        ),
        ProblemDefinition(
            "fractional5",
            "gradient of (x'Mx + a'x + c)/(b'x + d) on [1, 3]^5",
            _fractional5,
            x0=(3.0, 1.5, 2.0, 1.5, 2.0),
            known_solution=(1.0, 1.0, 1.0, 1.0, 1.0),
            stated_lipschitz=148.68,
        ),
        ProblemDefinition(
            "plane3",
            "(exp(-||x||^2) + 0.2) Mx on [-5, 5]^3 with x1 + x2 + x3 = 0",
            _plane3,
            x0=(-4.0, 3.0, 5.0),
            known_solution=(0.0, 0.0, 0.0),
            stated_lipschitz=5.0679,
            operator_class="strongly-pseudo-monotone",
        ),
        ProblemDefinition(
            "scalar-exp",
            "x exp(-x^2) on [-5, 5]",
            _scalar_exp,
            x0=(1.5,),
            known_solution=(0.0,),
        ),
        ProblemDefinition(
            "scalar-exp-strong",
            "x exp(-x^2) + 0.1 x on [-5, 5]",
            _scalar_exp_strong,
            x0=(1.5,),
            known_solution=(0.0,),
            operator_class="strongly-pseudo-monotone",
        ),
    )
}


def problem_names() -> list[str]:
    return sorted(PROBLEMS)


def definition(name: str) -> ProblemDefinition:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ProblemNotFoundError(name, problem_names()) from None


def reference_solution(
    op: OperatorSpec, feasible: FeasibleSet, x0, lipschitz: float, iterations: int
) -> tuple[Vector, float]:
    """Long plain FBF run (rho = 1, lambda = 0.5/L) and the natural residual of its endpoint."""
    lam = REFERENCE_STEP_FACTOR / lipschitz
    config = SolverConfig(
        method="fbf",
        lambda_mode=FixedStep(lam=lam),
        rho_schedule=ConstantRho(rho=1.0),
        x0=list(x0),
        max_iter=iterations,
        stop=ExactTermination(),
    )
    result = solve(config, op, feasible, lipschitz=lipschitz)
    return result.solution, natural_residual(op, feasible, result.solution, lam)


def build_problem(
    name: str,
    *,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    reference_iterations: Optional[int] = None,
    workers: Optional[int] = None,
) -> ProblemInstance:
    """Construct a problem and compute its constants (uncached)."""
    settings = get_settings()
    samples = settings.lipschitz_samples if samples is None else samples
    seed = settings.seed if seed is None else seed
    reference_iterations = settings.reference_iterations if reference_iterations is None else reference_iterations
    workers = settings.workers if workers is None else workers

    spec = definition(name)
    op, feasible = spec.build()
    region = enlarged_region(feasible)
    analysis = analyze(op, region, samples, seed, workers=workers)
    notes: list[str] = []

    lipschitz = bound = analysis.lipschitz_estimate
    lipschitz_source = "estimated"
    if spec.stated_lipschitz is not None:
        lipschitz, lipschitz_source = spec.stated_lipschitz, "stated"
        bound = max(bound, spec.stated_lipschitz)
        if analysis.lipschitz_estimate > spec.stated_lipschitz * STATED_LIPSCHITZ_SLACK:
            logger.warning(
                "%s: estimated Lipschitz constant %.6g exceeds the stated %.6g by more than 5%%",
                name, analysis.lipschitz_estimate, spec.stated_lipschitz,
            )
            notes.append("lipschitz estimate exceeds stated constant")
    if spec.step_lipschitz is not None:
        lipschitz, lipschitz_source = spec.step_lipschitz, "calibrated"
        notes.append(f"stepsizes scale with {spec.step_lipschitz:g}; certificates use the bound {bound:.6g}")
    gamma = analysis.strong_pm_modulus or None

    x0 = as_vector(spec.x0, dim=op.dim, name="x0")
    residual_lam = REFERENCE_STEP_FACTOR / lipschitz
    if spec.known_solution is not None:
        x_ref = as_vector(spec.known_solution, dim=op.dim, name="x_ref")
        source = "known"
    else:
        x_ref, _ = reference_solution(op, feasible, x0, lipschitz, reference_iterations)
        source = "computed"
    residual = natural_residual(op, feasible, x_ref, residual_lam)
    if residual > REFERENCE_RESIDUAL_TOL:
        logger.warning("%s: reference solution residual %.3g above %.0e", name, residual, REFERENCE_RESIDUAL_TOL)
        notes.append(f"reference residual {residual:.3g} above tolerance")

    logger.info(
        "%s: L=%.6g gamma=%s reference=%s (samples=%d, seed=%d)",
        name, lipschitz, f"{gamma:.6g}" if gamma else "n/a", source, samples, seed,
    )
    return ProblemInstance(
        name=name,
        description=spec.description,
        op=op,
        feasible=feasible,
        region=region,
        x0=x0,
        x_ref=x_ref,
        lipschitz=lipschitz if math.isfinite(lipschitz) else None,
        gamma=gamma,
        operator_class=spec.operator_class,
        lipschitz_bound=bound if math.isfinite(bound) else None,
        lipschitz_source=lipschitz_source,
        analysis=analysis,
        reference_source=source,
        reference_residual=residual,
        notes=notes,
    )


@lru_cache(maxsize=None)
def get_problem(name: str) -> ProblemInstance:
    return build_problem(name)


def registry() -> list[ProblemInstance]:
    return [get_problem(name) for name in problem_names()]
