"""Exception types shared across the package.

Subsystem indices reported by these errors are 0-based (index 0 is the
slowest subsystem).
"""

from __future__ import annotations


class StackDefinitionError(ValueError):
    """A stack, probe point, or derivative provider is dimensionally wrong."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SingularMatrixError(ArithmeticError):
    """A diagonal derivative block (or Newton matrix) is numerically singular.

    ``level`` is the offending subsystem index, ``cond`` the 2-norm condition
    estimate that tripped the limit.
    """

    def __init__(self, message: str, level: int | None = None, cond: float | None = None):
        super().__init__(message)
        self.level = level
        self.cond = cond


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EvaluationError(ArithmeticError):
    """A vector field or derivative produced a non-finite value."""


class NotSteadyStateError(ValueError):
    """An operation that requires an equilibrium was called off equilibrium."""
