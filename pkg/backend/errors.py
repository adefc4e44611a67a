"""Exception hierarchy shared by the solver library, the CLI and the HTTP service."""
from typing import Any, Iterable, Optional


class VIBenchError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatchError(VIBenchError, ValueError):
    def __init__(self, expected: int, got: int, what: str = "vector"):
        super().__init__(f"{what} has dimension {got}, expected {expected}")
        self.expected = expected
        self.got = got


class EmptySetError(VIBenchError, ValueError):
    pass


class BracketError(VIBenchError):
    pass


class DomainError(VIBenchError, ValueError):
    pass


class NonFiniteError(VIBenchError, ArithmeticError):
    pass


class PreconditionError(VIBenchError, ValueError):
    pass


class DivergenceError(VIBenchError):
    """Iterates or trajectory left the finite/bounded regime.

    ``state`` is the last solver state (or trajectory time), ``trace`` holds
    whatever was recorded before the blow-up so callers can still persist it.
    """

    def __init__(self, message: str, state: Any = None, trace: Optional[list] = None, time: Optional[float] = None):
        super().__init__(message)
        self.state = state
        self.trace = trace if trace is not None else []
        self.time = time


class ProblemNotFoundError(VIBenchError, KeyError):
    def __init__(self, name: str, valid: Iterable[str]):
        self.name = name
        self.valid = sorted(valid)
        super().__init__(f"unknown problem '{name}'; valid names: {', '.join(self.valid)}")

    def __str__(self) -> str:
        return self.args[0]
