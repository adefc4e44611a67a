"""
Feasible sets and exact Euclidean projections.

Every set used by the benchmark problems has a projection that is either in
closed form (box, halfspace, hyperplane) or reduces to a scalar multiplier
search (box intersected with one linear constraint). No QP solver is involved,
so iteration counts are reproducible bit for bit.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Union

import numpy as np
import numpy.typing as npt

from errors import BracketError, DimensionMismatchError, EmptySetError, NonFiniteError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

BISECTION_MAX_ITER = 200
BISECTION_RTOL = 1e-12
VERTEX_ENUMERATION_MAX_DIM = 10


def as_vector(values, dim: Optional[int] = None, name: str = "vector") -> Vector:
    """Convert to a finite 1-D float64 array, checking the dimension if given."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty one-dimensional vector")
    if dim is not None and arr.size != dim:
        raise DimensionMismatchError(dim, arr.size, name)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return arr


def _frozen(arr: Vector) -> Vector:
    arr.setflags(write=False)
    return arr


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; streams of one seed are independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True, eq=False)
class Region:
    """Axis-aligned box over which operators are analysed."""

    lo: Vector
    hi: Vector

    def __post_init__(self):
        lo = as_vector(self.lo, name="region.lo")
        hi = as_vector(self.hi, dim=lo.size, name="region.hi")
        if np.any(lo > hi):
            raise ValueError("region requires lo <= hi componentwise")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> Vector:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> Vector:
        return self.hi - self.lo

    def nearest_to_origin(self) -> Vector:
        return np.clip(np.zeros(self.dim), self.lo, self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = as_vector(x, dim=self.dim)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def sample(self, rng: np.random.Generator, count: int) -> npt.NDArray[np.float64]:
        return self.lo + rng.random((count, self.dim)) * self.widths

    def enlarge(self, d: float) -> "Region":
        return Region(self.lo - d, self.hi + d)

    def contains_region(self, other: "Region") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(self.hi >= other.hi))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Box:
    lo: Vector
    hi: Vector

    def __post_init__(self):
        lo = as_vector(self.lo, name="box.lo")
        hi = as_vector(self.hi, dim=lo.size, name="box.hi")
        if np.any(lo > hi):
            raise EmptySetError("box requires lo <= hi componentwise")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lo.size


@dataclass(frozen=True, eq=False)
class Halfspace:
    """{w : <a, w> <= b}. A zero normal is only accepted when explicitly allowed
    and then describes the whole space."""

    a: Vector
    b: float
    allow_zero_normal: bool = False

    def __post_init__(self):
        a = as_vector(self.a, name="halfspace.a")
        if not np.isfinite(self.b):
            raise NonFiniteError("halfspace offset must be finite")
        if not self.allow_zero_normal and not np.any(a):
            raise EmptySetError("halfspace normal must be nonzero")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class Hyperplane:
    a: Vector
    b: float

    def __post_init__(self):
        a = as_vector(self.a, name="hyperplane.a")
        if not np.any(a):
            raise EmptySetError("hyperplane normal must be nonzero")
        if not np.isfinite(self.b):
            raise NonFiniteError("hyperplane offset must be finite")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class BoxLinear:
    """Box [lo, hi] intersected with {<a, x> <= cap} or {<a, x> = cap}."""

    lo: Vector
    hi: Vector
    a: Vector
    cap: float
    relation: Literal["<=", "="] = "<="

    def __post_init__(self):
        lo = as_vector(self.lo, name="box_linear.lo")
        hi = as_vector(self.hi, dim=lo.size, name="box_linear.hi")
        a = as_vector(self.a, dim=lo.size, name="box_linear.a")
        if np.any(lo > hi):
            raise EmptySetError("box requires lo <= hi componentwise")
        if not np.any(a):
            raise EmptySetError("linear constraint normal must be nonzero")
        if self.relation not in ("<=", "="):
            raise ValueError(f"relation must be '<=' or '=', got {self.relation!r}")
        if not np.isfinite(self.cap):
            raise NonFiniteError("cap must be finite")
        lowest = float(np.sum(np.minimum(a * lo, a * hi)))
        highest = float(np.sum(np.maximum(a * lo, a * hi)))
        tol = BISECTION_RTOL * max(1.0, abs(self.cap))
        if self.cap < lowest - tol or (self.relation == "=" and self.cap > highest + tol):
            raise EmptySetError(
                f"cap {self.cap} not attainable: <a, x> ranges over [{lowest}, {highest}] on the box"
            )
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "cap", float(self.cap))

    @property
    def dim(self) -> int:
        return self.lo.size


FeasibleSet = Union[Box, Halfspace, Hyperplane, BoxLinear]


def _check_dim(feasible: FeasibleSet, v) -> Vector:
    return as_vector(v, dim=feasible.dim, name="point")


def project(feasible: FeasibleSet, v) -> Vector:
    """Euclidean projection of v onto the set."""
    v = _check_dim(feasible, v)
    if isinstance(feasible, Box):
        return np.clip(v, feasible.lo, feasible.hi)
    if isinstance(feasible, Halfspace):
        a = feasible.a
        norm_sq = float(a @ a)
        if norm_sq == 0.0:
            return v.copy()
        excess = (float(a @ v) - feasible.b) / norm_sq
        return v - excess * a if excess > 0.0 else v.copy()
    if isinstance(feasible, Hyperplane):
        a = feasible.a
        return v - ((float(a @ v) - feasible.b) / float(a @ a)) * a
    if isinstance(feasible, BoxLinear):
        return _project_box_linear(feasible, v)
    raise TypeError(f"unsupported feasible set {type(feasible).__name__}")


def _project_box_linear(feasible: BoxLinear, v: Vector) -> Vector:
    clipped = np.clip(v, feasible.lo, feasible.hi)
    if feasible.relation == "<=" and float(feasible.a @ clipped) <= feasible.cap:
        return clipped
    tau = _solve_multiplier(feasible, v)
    return np.clip(v - tau * feasible.a, feasible.lo, feasible.hi)


def _multiplier_curve(feasible: BoxLinear, v: Vector) -> Callable[[float], float]:
    """tau -> <a, clip(v - tau a, lo, hi)>, nonincreasing and piecewise linear."""
    a, lo, hi = feasible.a, feasible.lo, feasible.hi

    def phi(tau: float) -> float:
        return float(a @ np.clip(v - tau * a, lo, hi))

    return phi


def _solve_multiplier(feasible: BoxLinear, v: Vector) -> float:
    support = feasible.a != 0.0
    a = feasible.a[support]
    lo, hi, vs = feasible.lo[support], feasible.hi[support], v[support]
    target = feasible.cap
    tol = BISECTION_RTOL * max(1.0, abs(target))

    # The curve only bends where a coordinate enters or leaves its bounds, so
    # sorting those kinks gives an exact bracket for the root.
    kinks = np.unique(np.concatenate(((vs - lo) / a, (vs - hi) / a)))
    values = np.clip(vs[None, :] - kinks[:, None] * a[None, :], lo, hi) @ a
    k = int(np.searchsorted(-values, -target, side="left"))
    if k == 0:
        if target - values[0] > tol:
            raise BracketError(f"cap {target} exceeds the largest attainable value {values[0]}")
        return float(kinks[0])
    if k == kinks.size:
        if values[-1] - target > tol:
            raise BracketError(f"cap {target} below the smallest attainable value {values[-1]}")
        return float(kinks[-1])

    t_left, t_right = float(kinks[k - 1]), float(kinks[k])
    f_left, f_right = float(values[k - 1]), float(values[k])
    tau = t_left + (f_left - target) * (t_right - t_left) / (f_left - f_right)
    phi = _multiplier_curve(feasible, v)
    if abs(phi(tau) - target) <= tol:
        return tau
    return bisect_multiplier(phi, target, t_left, t_right, tol)


def bisect_multiplier(
    phi: Callable[[float], float],
    target: float,
    left: float,
    right: float,
    tol: float,
    max_iter: int = BISECTION_MAX_ITER,
) -> float:
    """Bisection for phi(tau) = target with phi nonincreasing on [left, right]."""
    f_left, f_right = phi(left), phi(right)
    if f_left < target - tol or f_right > target + tol:
        raise BracketError(f"[{left}, {right}] does not bracket {target}: phi = ({f_left}, {f_right})")
    mid = 0.5 * (left + right)
    for _ in range(max_iter):
        mid = 0.5 * (left + right)
        f_mid = phi(mid)
        if abs(f_mid - target) <= tol:
            return mid
        if f_mid > target:
            left = mid
        else:
            right = mid
    return mid


def contains(feasible: FeasibleSet, v, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    v = _check_dim(feasible, v)
    if isinstance(feasible, Box):
        return bool(np.all(v >= feasible.lo - tol) and np.all(v <= feasible.hi + tol))
    if isinstance(feasible, Halfspace):
        return float(feasible.a @ v) - feasible.b <= tol
    if isinstance(feasible, Hyperplane):
        return abs(float(feasible.a @ v) - feasible.b) <= tol
    if isinstance(feasible, BoxLinear):
        in_box = bool(np.all(v >= feasible.lo - tol) and np.all(v <= feasible.hi + tol))
        slack = float(feasible.a @ v) - feasible.cap
        if feasible.relation == "<=":
            return in_box and slack <= tol
        return in_box and abs(slack) <= tol
    raise TypeError(f"unsupported feasible set {type(feasible).__name__}")


def _box_corners(lo: Vector, hi: Vector) -> npt.NDArray[np.float64]:
    return np.array(list(itertools.product(*zip(lo, hi))), dtype=np.float64)


def vertices(feasible: FeasibleSet) -> npt.NDArray[np.float64]:
    """Vertices of a bounded polyhedral set (rows), for dimensions up to 10."""
    if isinstance(feasible, (Halfspace, Hyperplane)):
        raise ValueError(f"{type(feasible).__name__} is unbounded and has no vertex list")
    if feasible.dim > VERTEX_ENUMERATION_MAX_DIM:
        raise ValueError(f"vertex enumeration limited to dimension {VERTEX_ENUMERATION_MAX_DIM}")
    corners = _box_corners(feasible.lo, feasible.hi)
    if isinstance(feasible, Box):
        return np.unique(corners, axis=0)

    a, cap = feasible.a, feasible.cap
    tol = BISECTION_RTOL * max(1.0, abs(cap))
    sides = corners @ a
    if feasible.relation == "<=":
        keep = [corners[sides <= cap + tol]]
    else:
        keep = [corners[np.abs(sides - cap) <= tol]]
    # Box edges crossing the hyperplane <a, x> = cap.
    n = feasible.dim
    for i in range(n):
        if a[i] == 0.0:
            continue
        others = [j for j in range(n) if j != i]
        for choice in itertools.product(*[(feasible.lo[j], feasible.hi[j]) for j in others]):
            point = np.empty(n)
            point[others] = choice
            xi = (cap - float(a[others] @ np.asarray(choice))) / a[i]
            if feasible.lo[i] - tol <= xi <= feasible.hi[i] + tol:
                point[i] = min(max(xi, feasible.lo[i]), feasible.hi[i])
                keep.append(point[None, :])
    found = np.concatenate(keep, axis=0)
    if found.size == 0:
        raise EmptySetError("set has no vertices")
    return np.unique(np.round(found, 12), axis=0)


def bounding_box(feasible: FeasibleSet) -> Region:
    if isinstance(feasible, Box):
        return Region(feasible.lo, feasible.hi)
    if isinstance(feasible, BoxLinear):
        if feasible.dim > VERTEX_ENUMERATION_MAX_DIM:
            return Region(feasible.lo, feasible.hi)
        pts = vertices(feasible)
        return Region(pts.min(axis=0), pts.max(axis=0))
    raise ValueError(f"{type(feasible).__name__} is unbounded")


def diameter(feasible: FeasibleSet) -> float:
    """Diameter of the set; +inf for halfspaces and hyperplanes.

    For BoxLinear sets beyond the vertex-enumeration limit the diagonal of the
    box is returned, which bounds the diameter from above.
    """
    if isinstance(feasible, (Halfspace, Hyperplane)):
        return float("inf")
    if isinstance(feasible, Box):
        return float(np.linalg.norm(feasible.hi - feasible.lo))
    if feasible.dim > VERTEX_ENUMERATION_MAX_DIM:
        return float(np.linalg.norm(feasible.hi - feasible.lo))
    pts = vertices(feasible)
    best = 0.0
    for row in pts:
        best = max(best, float(np.max(np.linalg.norm(pts - row, axis=1))))
    return best


def enlarged_region(feasible: FeasibleSet, d: Optional[float] = None) -> Region:
    """Bounding box of {x + y : x in C, ||y|| <= d}; d defaults to diam(C)."""
    radius = diameter(feasible) if d is None else float(d)
    if not np.isfinite(radius) or radius < 0:
        raise ValueError("enlargement radius must be finite and nonnegative")
    return bounding_box(feasible).enlarge(radius)


def sample_feasible(
    feasible: FeasibleSet, count: int, rng: np.random.Generator, spread: float = 10.0
) -> npt.NDArray[np.float64]:
    """Random feasible points (rows). Not uniform, but covering the set's interior."""
    n = feasible.dim
    if isinstance(feasible, Box):
        return feasible.lo + rng.random((count, n)) * (feasible.hi - feasible.lo)
    if isinstance(feasible, BoxLinear) and n <= VERTEX_ENUMERATION_MAX_DIM:
        pts = vertices(feasible)
        weights = rng.dirichlet(np.ones(pts.shape[0]), size=count)
        return weights @ pts
    raw = rng.normal(scale=spread, size=(count, n))
    return np.array([project(feasible, row) for row in raw])


def stampacchia_gap(Fx, feasible: FeasibleSet, x, samples: Optional[npt.NDArray[np.float64]] = None) -> float:
    """min over y in C of <F(x), y - x>; nonnegative (up to rounding) iff x solves the VI.

    Exact for boxes and box-linear sets (a linear form attains its minimum at a
    vertex); otherwise taken over the supplied feasible samples.
    """
    x = _check_dim(feasible, x)
    Fx = _check_dim(feasible, Fx)
    if isinstance(feasible, Box):
        return float(np.sum(np.minimum(Fx * feasible.lo, Fx * feasible.hi)) - Fx @ x)
    if isinstance(feasible, BoxLinear) and feasible.dim <= VERTEX_ENUMERATION_MAX_DIM:
        return float(np.min(vertices(feasible) @ Fx) - Fx @ x)
    if samples is None:
        raise ValueError("samples are required for unbounded sets")
    return float(np.min((samples - x) @ Fx))


def minty_gap(F: Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]], x, samples: npt.NDArray[np.float64]) -> float:
    """min over sampled feasible y of <F(y), y - x>; F must accept a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    values = F(samples)
    return float(np.min(np.einsum("ij,ij->i", values, samples - x)))
