"""Exception types shared across the package."""


class PanTCRError(Exception):
    """Base class for all package errors."""


class ValidationError(PanTCRError, ValueError):
    """Input violates a shape, range or metadata invariant."""


class FormatError(PanTCRError, ValueError):
    """A file on disk does not follow the expected container layout."""


class CapacityError(PanTCRError):
    """Not enough source area to tile the requested patches."""


class NumericError(PanTCRError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class TrainingDiverged(PanTCRError, RuntimeError):
    """Loss became NaN or infinite during optimization."""

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
