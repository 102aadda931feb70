"""Exception hierarchy.

The CLI maps each family onto a distinct exit code, so every failure raised by
the library belongs to exactly one of them.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    kind = "error"


class InputError(EstimationError, ValueError):
    """Malformed input: bad shapes, unparsable data, schema violations."""

    exit_code = 2
    kind = "input"


class NumericalError(EstimationError, ArithmeticError):
    """A matrix that must be positive definite or of full rank is not."""

    exit_code = 3
    kind = "numerical"


class NotPositiveDefiniteError(NumericalError):
    pass


class SingularConstraintError(NumericalError):
    """The constraint Jacobian lost rank at some evaluation point."""

    def __init__(self, message: str, theta=None, rank: int | None = None):
        super().__init__(message)
        self.theta = theta
        self.rank = rank


class SimulationError(NumericalError):
    """Too many Monte Carlo replications failed to produce a usable estimate."""


class ConvergenceError(EstimationError, RuntimeError):
    """The manifold projection did not reach the requested tolerance."""

    exit_code = 4
    kind = "convergence"
