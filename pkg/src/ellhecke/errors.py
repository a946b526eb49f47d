"""Exception types shared across the package."""

from __future__ import annotations


class EllHeckeError(Exception):
    """Base class for all errors raised by ellhecke."""


class InvalidInputError(EllHeckeError, ValueError):
    """Non-finite or out-of-domain input (e.g. Im tau <= 0)."""


class SingularArgumentError(EllHeckeError, ValueError):
    """Argument too close to a lattice point, pole or singular divisor."""

    def __init__(self, message: str, distance: float = 0.0):
        super().__init__(message)
        self.distance = float(distance)


class NoConvergenceError(EllHeckeError, RuntimeError):
    def __init__(self, message: str, best_residual: float = float("nan")):
        super().__init__(message)
        self.best_residual = float(best_residual)


class DegenerateError(EllHeckeError, ValueError):
    """Parameters lie on a degenerate locus (s in {0, inf}, 2q in Lambda, ...)."""


class InconsistencyError(EllHeckeError, RuntimeError):
    """A self-verification step failed (fit residual above tolerance)."""


class ParameterError(EllHeckeError, ValueError):
    """Operator parameters (Hecke point, grid) are unusable."""


class GridMismatchError(EllHeckeError, ValueError):
    pass


class ConfigError(EllHeckeError, ValueError):
    """Configuration could not be parsed or validated."""
