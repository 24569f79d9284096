"""Exception types raised across the package."""


class CalibrationError(Exception):
    """Base class for every error raised by cplcalib."""


class InvalidParams(CalibrationError, ValueError):
    pass


class DisparityZeroOrNegative(CalibrationError, ValueError):
    pass


class EmptyPixelSet(CalibrationError, ValueError):
    pass


class NonPositiveWeight(CalibrationError, ValueError):
    pass


class ZeroDenominator(CalibrationError, ZeroDivisionError):
    pass


class LengthMismatch(CalibrationError, ValueError):
    pass


class NonFiniteGradient(CalibrationError, FloatingPointError):
    pass


class DivergenceDetected(CalibrationError, RuntimeError):
    pass


class SchemaError(CalibrationError, ValueError):
    """Dataset or result file does not match the expected schema."""


class ConsistencyError(CalibrationError, ValueError):
    """Stored world points disagree with the projection of their observations."""
