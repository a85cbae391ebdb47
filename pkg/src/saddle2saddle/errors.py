"""Exception types raised across the package."""


class Saddle2SaddleError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(Saddle2SaddleError, ValueError):
    pass


class ZeroLabel(Saddle2SaddleError, ValueError):
    """A label is exactly zero where non-zero labels are required."""


class AmbiguousArgmax(Saddle2SaddleError):
    """Two unfitted neurons tie for the next activation (strict mode)."""


class CollapsedNeuron(Saddle2SaddleError, FloatingPointError):
    pass


class NonFinite(Saddle2SaddleError, FloatingPointError):
    pass


class BadScale(Saddle2SaddleError, ValueError):
    pass


class ClusterMismatch(Saddle2SaddleError):
    pass


class TooFewSamples(Saddle2SaddleError, ValueError):
    pass


class DegenerateFit(Saddle2SaddleError, ValueError):
    pass


class BadDelta(Saddle2SaddleError, ValueError):
    pass
