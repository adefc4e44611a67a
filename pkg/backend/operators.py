"""
Operator zoo for the benchmark problems plus numeric analysis helpers.

Operators are frozen dataclasses that evaluate on a single point of shape
(n,) or on a batch of points of shape (k, n); analysis routines lean on the
batched form so that 1e5-sample Lipschitz estimates stay vectorized.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from errors import DimensionMismatchError, DomainError, NonFiniteError, PreconditionError
from geometry import Region, Vector, as_vector, make_rng

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

FD_STEP = 1e-6
POWER_ITERATIONS = 50
PROBE_SLACK = 1e-10
MAX_REPORTED_VIOLATIONS = 10
SAMPLE_BATCH = 4096
REFINE_FLOOR = 1e-9


def _as_matrix(values, dim: Optional[int] = None, name: str = "M") -> Array:
    mat = np.array(values, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if dim is not None and mat.shape[0] != dim:
        raise DimensionMismatchError(dim, mat.shape[0], name)
    if not np.all(np.isfinite(mat)):
        raise NonFiniteError(f"{name} has non-finite entries")
    mat.setflags(write=False)
    return mat


def _frozen(arr: Array) -> Array:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GShape:
    """g(x) = exp(-||x||^2) + alpha."""

    alpha: float = 0.0

    def __post_init__(self):
        if not (self.alpha >= 0.0 and np.isfinite(self.alpha)):
            raise ValueError("alpha must be finite and nonnegative")

    def __call__(self, x: Array) -> Array:
        return np.exp(-np.sum(x * x, axis=-1)) + self.alpha

    def gradient(self, x: Array) -> Array:
        return -2.0 * np.exp(-np.sum(x * x, axis=-1))[..., None] * x

    @property
    def infimum(self) -> float:
        return self.alpha


@dataclass(frozen=True, eq=False)
class Affine:
    """F(x) = Mx + p. With M = 0, p = 0 this is the zero operator."""

    M: Array
    p: Array

    def __post_init__(self):
        M = _as_matrix(self.M)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "p", _frozen(as_vector(self.p, dim=M.shape[0], name="p")))

    @classmethod
    def zero(cls, dim: int) -> "Affine":
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    @classmethod
    def identity(cls, dim: int) -> "Affine":
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.p.size

    def __call__(self, x: Array) -> Array:
        return x @ self.M.T + self.p


@dataclass(frozen=True, eq=False)
class PseudoAffine:
    """F(x) = g(x) (Mx + p)."""

    M: Array
    p: Array
    g: GShape = field(default_factory=GShape)

    def __post_init__(self):
        M = _as_matrix(self.M)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "p", _frozen(as_vector(self.p, dim=M.shape[0], name="p")))

    @property
    def dim(self) -> int:
        return self.p.size

    def __call__(self, x: Array) -> Array:
        return self.g(x)[..., None] * (x @ self.M.T + self.p)


@dataclass(frozen=True, eq=False)
class FractionalGradient:
    """Gradient of f(x) = (x'Mx + a'x + c) / (b'x + d) for symmetric M."""

    M: Array
    a: Array
    b: Array
    c: float
    d: float

    def __post_init__(self):
        M = _as_matrix(self.M)
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12):
            raise ValueError("fractional program matrix must be symmetric")
        n = M.shape[0]
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "a", _frozen(as_vector(self.a, dim=n, name="a")))
        object.__setattr__(self, "b", _frozen(as_vector(self.b, dim=n, name="b")))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "d", float(self.d))

    @property
    def dim(self) -> int:
        return self.a.size

    def denominator(self, x: Array) -> Array:
        return x @ self.b + self.d

    def numerator(self, x: Array) -> Array:
        return np.einsum("...i,ij,...j->...", x, self.M, x) + x @ self.a + self.c

    def _checked_denominator(self, x: Array) -> Array:
        den = self.denominator(x)
        if np.any(den <= 0.0):
            raise DomainError("fractional denominator b'x + d must be positive")
        return den

    def value(self, x: Array) -> Array:
        return self.numerator(x) / self._checked_denominator(x)

    def __call__(self, x: Array) -> Array:
        den = self._checked_denominator(x)[..., None]
        num = self.numerator(x)[..., None]
        return (den * (2.0 * x @ self.M.T + self.a) - num * self.b) / (den * den)

    def denominator_positive_on(self, region: Region) -> bool:
        # b'x + d is affine, so its minimum over a box sits at a corner.
        lowest = float(np.sum(np.minimum(self.b * region.lo, self.b * region.hi)) + self.d)
        return lowest > 0.0


@dataclass(frozen=True)
class Scalar1D:
    """F(x) = x exp(-x^2) (+ slope x for the strongly pseudo-monotone variant)."""

    shape: Literal["exp_bell", "exp_bell_plus_linear"] = "exp_bell"
    slope: float = 0.0

    def __post_init__(self):
        if self.shape not in ("exp_bell", "exp_bell_plus_linear"):
            raise ValueError(f"unknown scalar shape {self.shape!r}")
        if self.shape == "exp_bell" and self.slope != 0.0:
            raise ValueError("exp_bell has no linear term")

    @property
    def dim(self) -> int:
        return 1

    def __call__(self, x: Array) -> Array:
        return x * np.exp(-x * x) + self.slope * x


OperatorSpec = Union[Affine, PseudoAffine, FractionalGradient, Scalar1D]


def evaluate(op: OperatorSpec, x) -> Vector:
    """F(x) for a single point, with dimension, domain and finiteness checks."""
    x = as_vector(x, dim=op.dim, name="x")
    value = op(x)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{type(op).__name__} produced a non-finite value")
    return value


def evaluate_many(op: OperatorSpec, xs) -> Array:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != op.dim:
        raise DimensionMismatchError(op.dim, xs.shape[-1] if xs.ndim else 0, "batch")
    values = op(xs)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{type(op).__name__} produced non-finite values")
    return values


def fractional_value(op: FractionalGradient, x) -> float:
    x = as_vector(x, dim=op.dim, name="x")
    return float(op.value(x))


def monotonicity_gap(op: OperatorSpec, x, y) -> float:
    """<F(x) - F(y), x - y>; negative values witness non-monotonicity."""
    x = as_vector(x, dim=op.dim, name="x")
    y = as_vector(y, dim=op.dim, name="y")
    return float((evaluate(op, x) - evaluate(op, y)) @ (x - y))


def fd_jacobian(op: OperatorSpec, xs: Array, step: float = FD_STEP) -> Array:
    """Central-difference Jacobians for a batch of points, shape (k, n, n)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    k, n = xs.shape
    jac = np.empty((k, n, n))
    for j in range(n):
        shift = np.zeros(n)
        shift[j] = step
        jac[:, :, j] = (op(xs + shift) - op(xs - shift)) / (2.0 * step)
    if not np.all(np.isfinite(jac)):
        raise NonFiniteError("finite-difference Jacobian has non-finite entries")
    return jac


def spectral_norms(jac: Array, rng: np.random.Generator, iterations: int = POWER_ITERATIONS) -> Array:
    """Largest singular value of each Jacobian by power iteration on J'J."""
    gram = np.einsum("kij,kil->kjl", jac, jac)
    v = rng.normal(size=jac.shape[:1] + jac.shape[2:])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(iterations):
        w = np.einsum("kjl,kl->kj", gram, v)
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        zero = norms[:, 0] == 0.0
        norms[zero] = 1.0
        v = np.where(zero[:, None], v, w / norms)
    rayleigh = np.einsum("kj,kjl,kl->k", v, gram, v)
    return np.sqrt(np.maximum(rayleigh, 0.0))


def _jacobian_norms(op: OperatorSpec, xs: Array, rng: np.random.Generator) -> Array:
    return spectral_norms(fd_jacobian(op, xs), rng)


def _refine(op: OperatorSpec, region: Region, start: Array, value: float, rng: np.random.Generator) -> float:
    """Compass search maximizing the Jacobian norm inside the region."""
    n = region.dim
    widths = np.where(region.widths > 0, region.widths, 0.0)
    step = 0.05 * widths
    floor = np.where(widths > 0, REFINE_FLOOR, 0.0)
    point = start
    best = value
    directions = np.vstack([np.eye(n), -np.eye(n)])
    for _ in range(1000):
        if np.all(step <= floor):
            break
        candidates = np.clip(point + directions * step, region.lo, region.hi)
        norms = _jacobian_norms(op, candidates, rng)
        idx = int(np.argmax(norms))
        if norms[idx] > best:
            best = float(norms[idx])
            point = candidates[idx]
        else:
            step = 0.5 * step
    return best


def _sample_batch(op: OperatorSpec, region: Region, seed: int, batch: int, count: int) -> tuple[float, Array]:
    rng = make_rng(seed, stream=batch + 1)
    xs = region.sample(rng, count)
    norms = _jacobian_norms(op, xs, rng)
    idx = int(np.argmax(norms))
    return float(norms[idx]), xs[idx]


def estimate_lipschitz(
    op: OperatorSpec,
    region: Region,
    samples: int,
    seed: int,
    *,
    workers: int = 1,
    refine: bool = True,
    top: int = 8,
) -> float:
    """Max spectral norm of the finite-difference Jacobian over sampled points.

    The sample set is the region's center, its point nearest the origin and
    `samples` uniform draws. Draws are split in fixed batches with one Philox
    stream each, so the result does not depend on `workers`. With `refine`,
    a compass search climbs from the best candidates. The value under-estimates
    the true constant.
    """
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    if region.dim != op.dim:
        raise DimensionMismatchError(op.dim, region.dim, "region")
    if isinstance(op, FractionalGradient) and not op.denominator_positive_on(region):
        raise DomainError("fractional denominator is not positive on the region")

    sizes = [SAMPLE_BATCH] * (samples // SAMPLE_BATCH)
    if samples % SAMPLE_BATCH:
        sizes.append(samples % SAMPLE_BATCH)
    jobs = list(enumerate(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _sample_batch(op, region, seed, job[0], job[1]), jobs))
    else:
        results = [_sample_batch(op, region, seed, b, c) for b, c in jobs]

    anchor_rng = make_rng(seed, stream=0)
    anchors = np.vstack([region.center, region.nearest_to_origin()])
    anchor_norms = _jacobian_norms(op, anchors, anchor_rng)
    candidates = [(float(v), x) for v, x in zip(anchor_norms, anchors)] + results
    candidates.sort(key=lambda item: -item[0])
    best = candidates[0][0]
    if refine:
        for value, start in candidates[:top]:
            best = max(best, _refine(op, region, start, value, anchor_rng))
    if not np.isfinite(best):
        raise NonFiniteError("Lipschitz estimate is not finite")
    logger.debug("Lipschitz estimate %.6g for %s (samples=%d, seed=%d)", best, type(op).__name__, samples, seed)
    return best


def strong_pm_modulus(M, q_lower: float) -> float:
    """q_lower * lambda_min((M + M')/2), or 0 when that eigenvalue is not positive."""
    if not q_lower > 0.0:
        raise PreconditionError("q_lower must be positive")
    M = _as_matrix(M)
    lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    if lam_min <= 0.0:
        return 0.0
    return q_lower * lam_min


def lower_bound_of_g(op: OperatorSpec) -> Optional[float]:
    """Uniform positive lower bound of the scalar factor, when the operator has one."""
    if isinstance(op, PseudoAffine):
        return op.g.infimum if op.g.infimum > 0 else None
    if isinstance(op, Scalar1D) and op.shape == "exp_bell_plus_linear":
        return op.slope if op.slope > 0 else None
    return None


def modulus_for(op: OperatorSpec) -> float:
    """Strong pseudo-monotonicity modulus derivable from the operator's structure (0 if none)."""
    q = lower_bound_of_g(op)
    if q is None:
        if isinstance(op, Affine):
            return max(float(np.linalg.eigvalsh(0.5 * (op.M + op.M.T))[0]), 0.0)
        return 0.0
    if isinstance(op, PseudoAffine):
        return strong_pm_modulus(op.M, q)
    return strong_pm_modulus(np.eye(1), q)


@dataclass(frozen=True)
class OperatorAnalysis:
    lipschitz_estimate: float
    strong_pm_modulus: float
    sample_count: int
    seed: int
    region: Region

    def to_dict(self) -> dict:
        return {
            "lipschitz_estimate": self.lipschitz_estimate,
            "strong_pm_modulus": self.strong_pm_modulus,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "region": self.region.to_dict(),
        }


def analyze(op: OperatorSpec, region: Region, samples: int, seed: int, workers: int = 1) -> OperatorAnalysis:
    lipschitz = estimate_lipschitz(op, region, samples, seed, workers=workers)
    return OperatorAnalysis(lipschitz, modulus_for(op), samples, seed, region)


ProbeClass = Literal["monotone", "pseudo-monotone", "strongly-pseudo-monotone"]


@dataclass
class ProbeReport:
    operator_class: str
    pairs_checked: int
    seed: int
    violations: list[tuple[list[float], list[float]]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def _violating(op: OperatorSpec, xs: Array, ys: Array, operator_class: str, gamma: float) -> Array:
    Fx, Fy = op(xs), op(ys)
    diff = ys - xs
    if operator_class == "monotone":
        return np.einsum("ij,ij->i", Fx - Fy, xs - ys) < -PROBE_SLACK
    premise = np.einsum("ij,ij->i", Fx, diff) >= 0.0
    conclusion = np.einsum("ij,ij->i", Fy, diff)
    required = gamma * np.einsum("ij,ij->i", diff, diff) if operator_class == "strongly-pseudo-monotone" else 0.0
    return premise & (conclusion < required - PROBE_SLACK)


def probe_class(
    op: OperatorSpec,
    region: Region,
    operator_class: ProbeClass,
    pairs: int,
    seed: int,
    *,
    gamma: float = 0.0,
    candidates: Sequence[tuple[Sequence[float], Sequence[float]]] = (),
) -> ProbeReport:
    """Sampled check of a monotonicity class on the region.

    Explicit candidate pairs are checked first, then `pairs` uniform pairs.
    A pass is evidence, not proof.
    """
    if pairs < 1:
        raise PreconditionError("pairs must be >= 1")
    if operator_class not in ("monotone", "pseudo-monotone", "strongly-pseudo-monotone"):
        raise ValueError(f"unknown operator class {operator_class!r}")
    if operator_class == "strongly-pseudo-monotone" and not gamma > 0.0:
        raise PreconditionError("strongly-pseudo-monotone probes need gamma > 0")

    report = ProbeReport(operator_class=operator_class, pairs_checked=0, seed=seed)
    batches = []
    if candidates:
        cx = np.array([as_vector(x, dim=op.dim) for x, _ in candidates])
        cy = np.array([as_vector(y, dim=op.dim) for _, y in candidates])
        batches.append((cx, cy))
    rng = make_rng(seed)
    remaining = pairs
    while remaining > 0:
        count = min(remaining, SAMPLE_BATCH)
        batches.append((region.sample(rng, count), region.sample(rng, count)))
        remaining -= count

    for xs, ys in batches:
        bad = _violating(op, xs, ys, operator_class, gamma)
        report.pairs_checked += xs.shape[0]
        for idx in np.flatnonzero(bad):
            if len(report.violations) >= MAX_REPORTED_VIOLATIONS:
                break
            report.violations.append((xs[idx].tolist(), ys[idx].tolist()))
    return report
