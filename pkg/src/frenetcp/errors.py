"""Exception types shared across the pipeline.

The CLI maps these onto exit codes, so every failure a pipeline stage can
raise on bad inputs lives here rather than in the module that detects it.
"""


class FrenetCpError(Exception):
    """Base class for all library errors."""


class DegenerateRoute(FrenetCpError):
    """Reference route violates its invariants (too short, repeated vertices,
    inconsistent arc length)."""


class OutOfRange(FrenetCpError):
    """Longitudinal coordinate lies outside the route's arc-length span."""


class SchemaError(FrenetCpError):
    """Record file violates the line-delimited record schema."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GeometryError(FrenetCpError):
    """Record carries a route that fails geometric validation."""


class InsufficientData(FrenetCpError):
    """A scenario class has too few records to populate every split."""


class AlphaTooSmallForN(FrenetCpError):
    """The corrected quantile rank exceeds the sample size; more calibration
    data is required for this miscoverage level."""


class EmptyCalibration(FrenetCpError):
    """Marginal CDF estimation received an empty sample."""


class InfeasibleLevel(FrenetCpError):
    """No shared marginal level achieves the corrected joint coverage, even
    at the maximum; the second calibration split is too small."""


class HorizonMismatch(FrenetCpError):
    """Two horizon-indexed inputs disagree on length or step size."""


class EmptyTestSet(FrenetCpError):
    """Coverage evaluation received no records."""


class EmptySet(FrenetCpError):
    """Deviation profile requested for an empty record set."""


class FitDiverged(FrenetCpError):
    """Curve fit failed to reduce the residual within the iteration cap."""


class InsufficientPoints(FrenetCpError):
    """Too few data points for the number of free curve coefficients."""
