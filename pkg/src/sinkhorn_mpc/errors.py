"""Exception types shared across the package."""

import numpy as np


class ParameterError(ValueError):
    """A scalar parameter (epsilon, tolerance, margin...) is out of range."""


class InputError(ValueError):
    """Array input is malformed: wrong shape, NaN, or nonpositive where positivity is required."""


class UnderflowError(FloatingPointError):
    """Plain-domain Sinkhorn hit a zero or non-finite denominator; use the log-domain path."""


class UncontrollableError(np.linalg.LinAlgError):
    """The finite-horizon reachability problem is singular for the requested horizon."""


class NumericalBreakdownError(ArithmeticError):
    """A quantity guaranteed by theory (e.g. a stable closed loop) failed numerically."""
