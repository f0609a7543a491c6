"""Exception types shared across the package."""


class DveVioError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DveVioError, ValueError):
    """An argument violates a documented precondition."""


class OutOfViewError(DveVioError):
    """A landmark or patch falls outside the usable image area."""


class ImuSampleError(InvalidInputError):
    """An IMU sample contains non-finite values."""


class DegenerateCovarianceError(DveVioError, ArithmeticError):
    """A covariance matrix is not positive definite."""


class IngestionError(DveVioError):
    """A dataset or configuration file is missing or malformed."""
