"""Exception types raised across the package."""


class QuantizerError(Exception):
    """Base class for all package errors."""


class DomainError(QuantizerError, ValueError):
    """A point or sample lies outside the unit support [0, 1]."""


class DensitySpecError(QuantizerError, ValueError):
    """A density description could not be parsed or is invalid."""


class DegenerateIntervalError(QuantizerError, ValueError):
    """An interval is empty or narrower than the degeneracy floor."""


class RootNotFoundError(QuantizerError, RuntimeError):
    """No sign change (and no interior root) was found for a level polynomial."""

    def __init__(self, message, poly=None, bracket=None):
        super().__init__(message)
        self.poly = poly
        self.bracket = bracket


class InvalidInitError(QuantizerError, ValueError):
    """An explicit initial level vector violates ordering or endpoints."""


class InvalidThetaError(QuantizerError, ValueError):
    """A convex coefficient lies outside the open interval (0, 1)."""


class DegenerateCellError(QuantizerError, RuntimeError):
    """A quantizer cell carries (numerically) zero probability mass."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell
