"""Exception hierarchy shared by all subpackages."""

import numpy as np


class DegSDEError(Exception):
    """Base class for every error raised by degsde."""


class InvalidInputError(DegSDEError, ValueError):
    pass


class NotPSDError(DegSDEError, ValueError):
    pass


class CapabilityError(DegSDEError, TypeError):
    """An operation needs something the argument does not provide
    (a gradient, a Hessian, a driftless model, ...)."""


class NumericRangeError(DegSDEError, ArithmeticError):
    pass


class EvaluationError(DegSDEError, ArithmeticError):
    """A coefficient or test function produced a non-finite value.

    ``point`` holds the offending state, ``where`` optional extra location
    information (path/time index, byte offset in an expression, ...).
    """

    def __init__(self, message, point=None, where=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.where = where


class HypothesisViolation(DegSDEError):
    """A sampled check of a structural hypothesis failed; ``witness`` is the
    point where it failed."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float)


class CoverConstructionError(DegSDEError):
    """Raised when an atlas cannot be built (radii collapse below the floor)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float)
